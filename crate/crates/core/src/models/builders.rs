//! Architecture builders.
//!
//! The `*_s` builders produce desk-scale networks that keep each family's
//! defining motif (stacked 3×3 convolutions, residual shortcuts, parallel
//! inception branches) and train in minutes on a CPU. The full-scale
//! builders reproduce the published layer layouts; they can be run forward
//! but are not meant to be trained here.

use serde::{Deserialize, Serialize};

use super::graph::{Init, ModelGraph, NodeId};
use super::head::{attach_head, HeadConfig};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, PoolSpec, Scalar};

pub const BACKBONE: &str = "backbone.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    VggS,
    ResnetS,
    InceptionS,
    Vgg16,
    Resnet50,
    InceptionV3,
}

impl Arch {
    pub const ALL: [Arch; 6] = [
        Arch::VggS,
        Arch::ResnetS,
        Arch::InceptionS,
        Arch::Vgg16,
        Arch::Resnet50,
        Arch::InceptionV3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::VggS => "vgg_s",
            Arch::ResnetS => "resnet_s",
            Arch::InceptionS => "inception_s",
            Arch::Vgg16 => "vgg16",
            Arch::Resnet50 => "resnet50",
            Arch::InceptionV3 => "inception_v3",
        }
    }

    pub fn is_small(self) -> bool {
        matches!(self, Arch::VggS | Arch::ResnetS | Arch::InceptionS)
    }

    /// Convolutional feature extractor only, every parameter under `backbone.`.
    pub fn backbone<T: Scalar>(self, input: [usize; 3], width: usize) -> Result<ModelGraph<T>> {
        match self {
            Arch::VggS => vgg_s_backbone(input, width),
            Arch::ResnetS => resnet_s_backbone(input, width),
            Arch::InceptionS => inception_s_backbone(input, width),
            Arch::Vgg16 => vgg16_features(input),
            Arch::Resnet50 => resnet50_features(input),
            Arch::InceptionV3 => inception_v3_features(input),
        }
    }

    /// Backbone plus the binary classification head, initialized from `seed`.
    pub fn build<T: Scalar>(self, input: [usize; 3], cfg: &SmallConfig, seed: u64) -> Result<ModelGraph<T>> {
        let backbone = self.backbone(input, cfg.width)?;
        let mut model = attach_head(backbone, &cfg.head)?;
        model.initialize(seed);
        Ok(model)
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

/// Size knobs for the desk-scale variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmallConfig {
    /// Channel count of the first stage; later stages double it.
    pub width: usize,
    pub head: HeadConfig,
}

impl Default for SmallConfig {
    fn default() -> Self {
        SmallConfig {
            width: 16,
            head: HeadConfig::default(),
        }
    }
}

fn n(name: &str) -> String {
    format!("{BACKBONE}{name}")
}

fn conv_relu<T: Scalar>(g: &mut ModelGraph<T>, name: &str, x: NodeId, spec: ConvSpec) -> Result<NodeId> {
    let c = g.conv(&n(name), x, spec, true)?;
    g.relu(&n(&format!("{name}.relu")), c)
}

/// Convolution (no bias) → batchnorm → optional relu.
fn conv_bn<T: Scalar>(
    g: &mut ModelGraph<T>,
    name: &str,
    x: NodeId,
    spec: ConvSpec,
    relu: bool,
) -> Result<NodeId> {
    let c = g.conv(&n(name), x, spec, false)?;
    let b = g.batchnorm(&n(&format!("{name}.bn")), c)?;
    if relu {
        g.relu(&n(&format!("{name}.relu")), b)
    } else {
        Ok(b)
    }
}

fn channels<T: Scalar>(g: &ModelGraph<T>, x: NodeId) -> usize {
    g.nodes()[x].shape[0]
}

// ---------------------------------------------------------------------------
// VGG

/// Two blocks of two 3×3 convolutions, each block closed by 2×2 max pooling.
pub fn vgg_s_backbone<T: Scalar>(input: [usize; 3], width: usize) -> Result<ModelGraph<T>> {
    let mut g = ModelGraph::new(input);
    let mut x = 0;
    for (b, w) in [(1, width), (2, 2 * width)] {
        for l in 1..=2 {
            x = conv_relu(&mut g, &format!("block{b}.conv{l}"), x, ConvSpec::same(w, 3, 3))?;
        }
        x = g.maxpool(&n(&format!("block{b}.pool")), x, PoolSpec::new(2, 2))?;
    }
    Ok(g)
}

pub fn build_vgg_s<T: Scalar>(input: [usize; 3], cfg: &SmallConfig) -> Result<ModelGraph<T>> {
    Arch::VggS.build(input, cfg, 0)
}

const VGG16_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

/// The thirteen convolutions and five pooling stages of VGG-16.
pub fn vgg16_features<T: Scalar>(input: [usize; 3]) -> Result<ModelGraph<T>> {
    let mut g = ModelGraph::new(input);
    let mut x = 0;
    for (b, &(convs, w)) in VGG16_BLOCKS.iter().enumerate() {
        for l in 1..=convs {
            x = conv_relu(&mut g, &format!("block{}.conv{l}", b + 1), x, ConvSpec::same(w, 3, 3))?;
        }
        x = g.maxpool(&n(&format!("block{}.pool", b + 1)), x, PoolSpec::new(2, 2))?;
    }
    Ok(g)
}

/// Full VGG-16: 13 convolutions and 3 fully connected layers (4096, 4096,
/// 1000 logits).
pub fn build_vgg16<T: Scalar>(input: [usize; 3]) -> Result<ModelGraph<T>> {
    let mut g = vgg16_features(input)?;
    let mut x = g.output();
    x = g.flatten("top.flatten", x)?;
    for (i, units) in [4096, 4096].into_iter().enumerate() {
        x = g.dense(&format!("top.fc{}", i + 1), x, units, Init::KaimingUniform { fan_in: 0 })?;
        x = g.relu(&format!("top.fc{}.relu", i + 1), x)?;
        x = g.dropout(&format!("top.fc{}.dropout", i + 1), x, 0.5)?;
    }
    let top = g.dense("top.predictions", x, 1000, Init::XavierUniform { fan_in: 0, fan_out: 0 })?;
    let start = g.node_id("top.flatten").expect("just added");
    g.mark_head(start);
    debug_assert_eq!(g.output(), top);
    g.initialize(0);
    Ok(g)
}

// ---------------------------------------------------------------------------
// ResNet

fn basic_block<T: Scalar>(g: &mut ModelGraph<T>, name: &str, x: NodeId, out: usize, stride: usize) -> Result<NodeId> {
    let a = conv_bn(g, &format!("{name}.conv1"), x, ConvSpec::new(out, 3, stride, 1), true)?;
    let b = conv_bn(g, &format!("{name}.conv2"), a, ConvSpec::new(out, 3, 1, 1), false)?;
    let shortcut = if stride != 1 || channels(g, x) != out {
        projection(g, name, x, out, stride)?
    } else {
        x
    };
    let sum = g.add(&n(&format!("{name}.add")), b, shortcut)?;
    g.relu(&n(&format!("{name}.out")), sum)
}

fn projection<T: Scalar>(g: &mut ModelGraph<T>, name: &str, x: NodeId, out: usize, stride: usize) -> Result<NodeId> {
    let p = g.conv(&n(&format!("{name}.proj")), x, ConvSpec::new(out, 1, stride, 0), false)?;
    g.mark_shortcut(p);
    g.batchnorm(&n(&format!("{name}.proj.bn")), p)
}

/// Residual block with identity shortcut; fails at build time when the
/// branch changes shape, since there is no projection to reconcile it.
pub fn identity_block<T: Scalar>(g: &mut ModelGraph<T>, name: &str, x: NodeId, out: usize, stride: usize) -> Result<NodeId> {
    let a = conv_bn(g, &format!("{name}.conv1"), x, ConvSpec::new(out, 3, stride, 1), true)?;
    let b = conv_bn(g, &format!("{name}.conv2"), a, ConvSpec::new(out, 3, 1, 1), false)?;
    let sum = g.add(&n(&format!("{name}.add")), b, x)?;
    g.relu(&n(&format!("{name}.out")), sum)
}

/// Stem (3×3 stride-2 conv) and two stages of two basic blocks; the second
/// stage halves the resolution and doubles the width.
pub fn resnet_s_backbone<T: Scalar>(input: [usize; 3], width: usize) -> Result<ModelGraph<T>> {
    let mut g = ModelGraph::new(input);
    let mut x = conv_bn(&mut g, "stem", 0, ConvSpec::new(width, 3, 2, 1), true)?;
    for (s, (w, stride)) in [(width, 1), (2 * width, 2)].into_iter().enumerate() {
        for b in 0..2 {
            let stride = if b == 0 { stride } else { 1 };
            x = basic_block(&mut g, &format!("stage{}.block{}", s + 1, b + 1), x, w, stride)?;
        }
    }
    Ok(g)
}

pub fn build_resnet_s<T: Scalar>(input: [usize; 3], cfg: &SmallConfig) -> Result<ModelGraph<T>> {
    Arch::ResnetS.build(input, cfg, 0)
}

fn bottleneck<T: Scalar>(g: &mut ModelGraph<T>, name: &str, x: NodeId, mid: usize, stride: usize) -> Result<NodeId> {
    let out = 4 * mid;
    let a = conv_bn(g, &format!("{name}.conv1"), x, ConvSpec::new(mid, 1, 1, 0), true)?;
    let b = conv_bn(g, &format!("{name}.conv2"), a, ConvSpec::new(mid, 3, stride, 1), true)?;
    let c = conv_bn(g, &format!("{name}.conv3"), b, ConvSpec::new(out, 1, 1, 0), false)?;
    let shortcut = if stride != 1 || channels(g, x) != out {
        projection(g, name, x, out, stride)?
    } else {
        x
    };
    let sum = g.add(&n(&format!("{name}.add")), c, shortcut)?;
    g.relu(&n(&format!("{name}.out")), sum)
}

/// ResNet-50 convolutional body: 7×7 stem and bottleneck stages of 3, 4, 6, 3 blocks.
pub fn resnet50_features<T: Scalar>(input: [usize; 3]) -> Result<ModelGraph<T>> {
    let mut g = ModelGraph::new(input);
    let x = conv_bn(&mut g, "stem", 0, ConvSpec::new(64, 7, 2, 3), true)?;
    let mut x = g.maxpool(&n("stem.pool"), x, PoolSpec::padded(3, 2, 1))?;
    for (s, (blocks, mid)) in [(3, 64), (4, 128), (6, 256), (3, 512)].into_iter().enumerate() {
        for b in 0..blocks {
            let stride = if b == 0 && s > 0 { 2 } else { 1 };
            x = bottleneck(&mut g, &format!("stage{}.block{}", s + 1, b + 1), x, mid, stride)?;
        }
    }
    Ok(g)
}

/// Full ResNet-50 with global pooling and a 1000-way dense layer: 50 weighted layers.
pub fn build_resnet50<T: Scalar>(input: [usize; 3]) -> Result<ModelGraph<T>> {
    let mut g = resnet50_features(input)?;
    let x = g.output();
    let p = g.global_avg_pool("top.pool", x)?;
    g.dense("top.predictions", p, 1000, Init::XavierUniform { fan_in: 0, fan_out: 0 })?;
    g.mark_head(p);
    g.initialize(0);
    Ok(g)
}

// ---------------------------------------------------------------------------
// Inception

/// Branch widths of one inception module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionWidths {
    pub b1x1: usize,
    pub b3x3_reduce: usize,
    pub b3x3: usize,
    pub b5x5_reduce: usize,
    pub b5x5: usize,
    pub pool_proj: usize,
}

impl InceptionWidths {
    pub fn output_channels(&self) -> usize {
        self.b1x1 + self.b3x3 + self.b5x5 + self.pool_proj
    }
}

/// Parallel 1×1, 1×1→3×3, 1×1→5×5 and 3×3-avgpool→1×1 branches,
/// concatenated along channels. Returns the concat node.
pub fn inception_module<T: Scalar>(g: &mut ModelGraph<T>, name: &str, x: NodeId, w: InceptionWidths) -> Result<NodeId> {
    let b1 = conv_bn(g, &format!("{name}.b1x1"), x, ConvSpec::same(w.b1x1, 1, 1), true)?;
    let r3 = conv_bn(g, &format!("{name}.b3x3_reduce"), x, ConvSpec::same(w.b3x3_reduce, 1, 1), true)?;
    let b3 = conv_bn(g, &format!("{name}.b3x3"), r3, ConvSpec::same(w.b3x3, 3, 3), true)?;
    let r5 = conv_bn(g, &format!("{name}.b5x5_reduce"), x, ConvSpec::same(w.b5x5_reduce, 1, 1), true)?;
    let b5 = conv_bn(g, &format!("{name}.b5x5"), r5, ConvSpec::same(w.b5x5, 5, 5), true)?;
    let p = g.avgpool(&n(&format!("{name}.pool")), x, PoolSpec::padded(3, 1, 1))?;
    let bp = conv_bn(g, &format!("{name}.pool_proj"), p, ConvSpec::same(w.pool_proj, 1, 1), true)?;
    g.concat(&n(&format!("{name}.concat")), &[b1, b3, b5, bp])
}

/// Widths used by `inception_s` for a module whose branches sum to `out`.
pub fn small_inception_widths(out: usize) -> InceptionWidths {
    let q = out / 4;
    InceptionWidths {
        b1x1: q,
        b3x3_reduce: q,
        b3x3: q,
        b5x5_reduce: (q / 2).max(1),
        b5x5: q,
        pool_proj: out - 3 * q,
    }
}

/// Stem (3×3 stride-2 conv), inception module, 2×2 max pool, inception module.
pub fn inception_s_backbone<T: Scalar>(input: [usize; 3], width: usize) -> Result<ModelGraph<T>> {
    let mut g = ModelGraph::new(input);
    let x = conv_bn(&mut g, "stem", 0, ConvSpec::new(width, 3, 2, 1), true)?;
    let x = inception_module(&mut g, "mixed1", x, small_inception_widths(width))?;
    let x = g.maxpool(&n("pool1"), x, PoolSpec::new(2, 2))?;
    inception_module(&mut g, "mixed2", x, small_inception_widths(2 * width))?;
    Ok(g)
}

pub fn build_inception_s<T: Scalar>(input: [usize; 3], cfg: &SmallConfig) -> Result<ModelGraph<T>> {
    Arch::InceptionS.build(input, cfg, 0)
}

fn cbr<T: Scalar>(g: &mut ModelGraph<T>, name: &str, x: NodeId, out: usize, k: (usize, usize), stride: usize, same: bool) -> Result<NodeId> {
    let spec = ConvSpec {
        out_channels: out,
        kernel: k,
        stride: (stride, stride),
        padding: if same { (k.0 / 2, k.1 / 2) } else { (0, 0) },
    };
    conv_bn(g, name, x, spec, true)
}

/// InceptionV3 body: stem, three 35×35 modules, grid reduction, four
/// factorized 7×7 modules, grid reduction, two expanded-filter modules.
/// Needs inputs of at least 75×75.
pub fn inception_v3_features<T: Scalar>(input: [usize; 3]) -> Result<ModelGraph<T>> {
    let mut g = ModelGraph::new(input);
    let g_ = &mut g;
    let mut x = cbr(g_, "stem.conv1", 0, 32, (3, 3), 2, false)?;
    x = cbr(g_, "stem.conv2", x, 32, (3, 3), 1, false)?;
    x = cbr(g_, "stem.conv3", x, 64, (3, 3), 1, true)?;
    x = g_.maxpool(&n("stem.pool1"), x, PoolSpec::new(3, 2))?;
    x = cbr(g_, "stem.conv4", x, 80, (1, 1), 1, false)?;
    x = cbr(g_, "stem.conv5", x, 192, (3, 3), 1, false)?;
    x = g_.maxpool(&n("stem.pool2"), x, PoolSpec::new(3, 2))?;

    for (i, pool_features) in [32, 64, 64].into_iter().enumerate() {
        let m = format!("mixed{}", i);
        let b1 = cbr(g_, &format!("{m}.b1x1"), x, 64, (1, 1), 1, true)?;
        let b5 = cbr(g_, &format!("{m}.b5x5_1"), x, 48, (1, 1), 1, true)?;
        let b5 = cbr(g_, &format!("{m}.b5x5_2"), b5, 64, (5, 5), 1, true)?;
        let b3 = cbr(g_, &format!("{m}.b3x3dbl_1"), x, 64, (1, 1), 1, true)?;
        let b3 = cbr(g_, &format!("{m}.b3x3dbl_2"), b3, 96, (3, 3), 1, true)?;
        let b3 = cbr(g_, &format!("{m}.b3x3dbl_3"), b3, 96, (3, 3), 1, true)?;
        let p = g_.avgpool(&n(&format!("{m}.pool")), x, PoolSpec::padded(3, 1, 1))?;
        let bp = cbr(g_, &format!("{m}.pool_proj"), p, pool_features, (1, 1), 1, true)?;
        x = g_.concat(&n(&format!("{m}.concat")), &[b1, b5, b3, bp])?;
    }

    {
        let m = "mixed3";
        let b3 = cbr(g_, &format!("{m}.b3x3"), x, 384, (3, 3), 2, false)?;
        let d = cbr(g_, &format!("{m}.b3x3dbl_1"), x, 64, (1, 1), 1, true)?;
        let d = cbr(g_, &format!("{m}.b3x3dbl_2"), d, 96, (3, 3), 1, true)?;
        let d = cbr(g_, &format!("{m}.b3x3dbl_3"), d, 96, (3, 3), 2, false)?;
        let p = g_.maxpool(&n(&format!("{m}.pool")), x, PoolSpec::new(3, 2))?;
        x = g_.concat(&n(&format!("{m}.concat")), &[b3, d, p])?;
    }

    for (i, c7) in [128, 160, 160, 192].into_iter().enumerate() {
        let m = format!("mixed{}", 4 + i);
        let b1 = cbr(g_, &format!("{m}.b1x1"), x, 192, (1, 1), 1, true)?;
        let a = cbr(g_, &format!("{m}.b7x7_1"), x, c7, (1, 1), 1, true)?;
        let a = cbr(g_, &format!("{m}.b7x7_2"), a, c7, (1, 7), 1, true)?;
        let a = cbr(g_, &format!("{m}.b7x7_3"), a, 192, (7, 1), 1, true)?;
        let d = cbr(g_, &format!("{m}.b7x7dbl_1"), x, c7, (1, 1), 1, true)?;
        let d = cbr(g_, &format!("{m}.b7x7dbl_2"), d, c7, (7, 1), 1, true)?;
        let d = cbr(g_, &format!("{m}.b7x7dbl_3"), d, c7, (1, 7), 1, true)?;
        let d = cbr(g_, &format!("{m}.b7x7dbl_4"), d, c7, (7, 1), 1, true)?;
        let d = cbr(g_, &format!("{m}.b7x7dbl_5"), d, 192, (1, 7), 1, true)?;
        let p = g_.avgpool(&n(&format!("{m}.pool")), x, PoolSpec::padded(3, 1, 1))?;
        let bp = cbr(g_, &format!("{m}.pool_proj"), p, 192, (1, 1), 1, true)?;
        x = g_.concat(&n(&format!("{m}.concat")), &[b1, a, d, bp])?;
    }

    {
        let m = "mixed8";
        let a = cbr(g_, &format!("{m}.b3x3_1"), x, 192, (1, 1), 1, true)?;
        let a = cbr(g_, &format!("{m}.b3x3_2"), a, 320, (3, 3), 2, false)?;
        let d = cbr(g_, &format!("{m}.b7x7x3_1"), x, 192, (1, 1), 1, true)?;
        let d = cbr(g_, &format!("{m}.b7x7x3_2"), d, 192, (1, 7), 1, true)?;
        let d = cbr(g_, &format!("{m}.b7x7x3_3"), d, 192, (7, 1), 1, true)?;
        let d = cbr(g_, &format!("{m}.b7x7x3_4"), d, 192, (3, 3), 2, false)?;
        let p = g_.maxpool(&n(&format!("{m}.pool")), x, PoolSpec::new(3, 2))?;
        x = g_.concat(&n(&format!("{m}.concat")), &[a, d, p])?;
    }

    for i in 0..2 {
        let m = format!("mixed{}", 9 + i);
        let b1 = cbr(g_, &format!("{m}.b1x1"), x, 320, (1, 1), 1, true)?;
        let a = cbr(g_, &format!("{m}.b3x3_1"), x, 384, (1, 1), 1, true)?;
        let a1 = cbr(g_, &format!("{m}.b3x3_2a"), a, 384, (1, 3), 1, true)?;
        let a2 = cbr(g_, &format!("{m}.b3x3_2b"), a, 384, (3, 1), 1, true)?;
        let a = g_.concat(&n(&format!("{m}.b3x3.concat")), &[a1, a2])?;
        let d = cbr(g_, &format!("{m}.b3x3dbl_1"), x, 448, (1, 1), 1, true)?;
        let d = cbr(g_, &format!("{m}.b3x3dbl_2"), d, 384, (3, 3), 1, true)?;
        let d1 = cbr(g_, &format!("{m}.b3x3dbl_3a"), d, 384, (1, 3), 1, true)?;
        let d2 = cbr(g_, &format!("{m}.b3x3dbl_3b"), d, 384, (3, 1), 1, true)?;
        let d = g_.concat(&n(&format!("{m}.b3x3dbl.concat")), &[d1, d2])?;
        let p = g_.avgpool(&n(&format!("{m}.pool")), x, PoolSpec::padded(3, 1, 1))?;
        let bp = cbr(g_, &format!("{m}.pool_proj"), p, 192, (1, 1), 1, true)?;
        x = g_.concat(&n(&format!("{m}.concat")), &[b1, a, d, bp])?;
    }
    Ok(g)
}

/// Full InceptionV3 with global pooling and a 1000-way dense layer.
pub fn build_inception_v3<T: Scalar>(input: [usize; 3]) -> Result<ModelGraph<T>> {
    let mut g = inception_v3_features(input)?;
    let x = g.output();
    let p = g.global_avg_pool("top.pool", x)?;
    g.dense("top.predictions", p, 1000, Init::XavierUniform { fan_in: 0, fan_out: 0 })?;
    g.mark_head(p);
    g.initialize(0);
    Ok(g)
}
