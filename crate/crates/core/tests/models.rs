use pmw_core::models::builders::{identity_block, inception_module, small_inception_widths};
use pmw_core::models::{
    attach_head, build_inception_s, build_resnet50, build_resnet_s, build_vgg16, build_vgg_s, decode, encode,
    load_entries, load_weights, save_weights, Arch, HeadConfig, ModelGraph, SmallConfig,
};
use pmw_core::rng::{stream, Purpose};
use pmw_core::tensor::ops::{self, Mode, BN_EPS};
use pmw_core::tensor::ConvSpec;
use pmw_core::training::{train_step, Optimizer, OptimizerConfig};
use pmw_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

#[test]
fn vgg16_has_13_conv_and_3_dense() {
    let g: ModelGraph<f32> = build_vgg16([3, 32, 32]).unwrap();
    assert_eq!(g.count_ops("conv2d"), 13);
    assert_eq!(g.count_ops("dense"), 3);
    assert_eq!(g.output_shape(), [1000]);
}

#[test]
fn resnet50_has_50_weighted_layers() {
    let g: ModelGraph<f32> = build_resnet50([3, 64, 64]).unwrap();
    assert_eq!(g.weighted_layers(), 50);
    assert_eq!(g.count_ops("add"), 16);
}

#[test]
fn small_variants_produce_one_probability_per_image() {
    let cfg = SmallConfig {
        width: 4,
        ..SmallConfig::default()
    };
    let x = Tensor::<f32>::from_fn(&[2, 3, 32, 32], |i| (i % 17) as f32 / 17.0);
    let builders: [fn([usize; 3], &SmallConfig) -> pmw_core::Result<ModelGraph<f32>>; 3] =
        [build_vgg_s, build_resnet_s, build_inception_s];
    for build in builders {
        let mut g = build([3, 32, 32], &cfg).unwrap();
        g.initialize(1);
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), [2, 1]);
        assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(g.forward(&x).unwrap().data(), y.data(), "inference must be deterministic");
    }
}

#[test]
fn vgg_s_parameter_count_closed_form() {
    for (w, hidden) in [(4usize, 8usize), (16, 256)] {
        let cfg = SmallConfig {
            width: w,
            head: HeadConfig {
                hidden_width: hidden,
                ..HeadConfig::default()
            },
        };
        let g: ModelGraph<f32> = Arch::VggS.build([3, 32, 32], &cfg, 0).unwrap();
        let conv = |cin: usize, cout: usize| 9 * cin * cout + cout;
        let backbone = conv(3, w) + conv(w, w) + conv(w, 2 * w) + conv(2 * w, 2 * w);
        let head = 2 * w * hidden + hidden + hidden + 1;
        assert_eq!(g.parameter_count(), backbone + head);
    }
}

#[test]
fn head_parameter_count_and_double_attach() {
    let backbone: ModelGraph<f32> = Arch::ResnetS.backbone([3, 16, 16], 4).unwrap();
    let before = backbone.parameter_count();
    let c = backbone.output_shape()[0];
    let cfg = HeadConfig {
        hidden_width: 7,
        ..HeadConfig::default()
    };
    let with_head = attach_head(backbone, &cfg).unwrap();
    assert_eq!(with_head.parameter_count() - before, c * 7 + 7 + 7 + 1);
    assert!(matches!(attach_head(with_head, &cfg), Err(Error::Graph(_))));
}

#[test]
fn zero_residual_branch_is_relu_of_input() {
    let mut g = ModelGraph::<f64>::new([3, 5, 5]);
    identity_block(&mut g, "blk", 0, 3, 1).unwrap();
    for p in g.params_mut() {
        if p.name.ends_with(".weight") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let x = rand_t(&mut ChaCha8Rng::seed_from_u64(1), &[2, 3, 5, 5]);
    assert_eq!(g.forward(&x).unwrap().data(), ops::relu(&x).data());

    let mut bad = ModelGraph::<f64>::new([3, 5, 5]);
    assert!(identity_block(&mut bad, "blk", 0, 4, 1).is_err());
}

/// conv (no bias) → batchnorm in inference mode → relu, computed directly
/// from the graph's parameters.
fn cbr(g: &ModelGraph<f64>, name: &str, x: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
    let p = |s: &str| g.param(&format!("backbone.{name}{s}")).unwrap().value.clone();
    let y = ops::conv2d(x, &p(".weight"), None, &spec).unwrap();
    let (mut m, mut v) = (p(".bn.running_mean"), p(".bn.running_var"));
    let (y, _) = ops::batchnorm_forward(&y, &p(".bn.gamma"), &p(".bn.beta"), &mut m, &mut v, 0.0, BN_EPS, Mode::Infer).unwrap();
    ops::relu(&y)
}

#[test]
fn inception_module_is_concat_of_branches() {
    let w = small_inception_widths(12);
    let mut g = ModelGraph::<f64>::new([5, 9, 9]);
    let out = inception_module(&mut g, "mix", 0, w).unwrap();
    assert_eq!(g.nodes()[out].shape[0], w.output_channels());
    g.initialize(4);
    let r = &mut ChaCha8Rng::seed_from_u64(2);
    for p in g.params_mut() {
        if p.name.ends_with("running_mean") || p.name.ends_with("beta") {
            p.value = Tensor::from_fn(p.value.shape(), |_| r.gen_range(-0.5..0.5));
        }
        if p.name.ends_with("running_var") || p.name.ends_with("gamma") {
            p.value = Tensor::from_fn(p.value.shape(), |_| r.gen_range(0.5..1.5));
        }
    }
    let x = rand_t(r, &[2, 5, 9, 9]);

    let b1 = cbr(&g, "mix.b1x1", &x, ConvSpec::same(w.b1x1, 1, 1));
    let b3 = cbr(&g, "mix.b3x3_reduce", &x, ConvSpec::same(w.b3x3_reduce, 1, 1));
    let b3 = cbr(&g, "mix.b3x3", &b3, ConvSpec::same(w.b3x3, 3, 3));
    let b5 = cbr(&g, "mix.b5x5_reduce", &x, ConvSpec::same(w.b5x5_reduce, 1, 1));
    let b5 = cbr(&g, "mix.b5x5", &b5, ConvSpec::same(w.b5x5, 5, 5));
    let pooled = ops::avgpool2d(&x, &pmw_core::tensor::PoolSpec::padded(3, 1, 1)).unwrap();
    let bp = cbr(&g, "mix.pool_proj", &pooled, ConvSpec::same(w.pool_proj, 1, 1));

    // Concatenate along channels by hand.
    let parts = [&b1, &b3, &b5, &bp];
    let total: usize = parts.iter().map(|t| t.shape()[1]).sum();
    let mut expected = Vec::new();
    for s in 0..2 {
        for t in parts {
            let per = t.len() / 2;
            expected.extend_from_slice(&t.data()[s * per..(s + 1) * per]);
        }
    }
    let got = g.forward(&x).unwrap();
    assert_eq!(got.shape(), [2, total, 9, 9]);
    let worst = got.data().iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn freezing_backbone_keeps_it_bit_identical() {
    let cfg = SmallConfig {
        width: 4,
        head: HeadConfig {
            hidden_width: 8,
            ..HeadConfig::default()
        },
    };
    for arch in [Arch::VggS, Arch::ResnetS, Arch::InceptionS] {
        let mut model: ModelGraph<f32> = arch.build([3, 16, 16], &cfg, 3).unwrap();
        let report = model.freeze_prefix("backbone.");
        let backbone_params = model.params().iter().filter(|p| p.name.starts_with("backbone.")).count();
        assert_eq!(report.matched, backbone_params);
        assert!((report.frozen_fraction - backbone_params as f64 / model.params().len() as f64).abs() < 1e-15);

        let before = model.clone();
        let mut opt = Optimizer::new(OptimizerConfig::default());
        let r = &mut ChaCha8Rng::seed_from_u64(7);
        for step in 0..10 {
            let x = Tensor::<f32>::from_fn(&[4, 3, 16, 16], |_| r.gen());
            let labels = [0.0, 1.0, 1.0, 0.0];
            train_step(&mut model, &x, &labels, &mut opt, &mut stream(1, Purpose::Dropout, step)).unwrap();
        }
        for (a, b) in before.params().iter().zip(model.params()) {
            if a.name.starts_with("backbone.") {
                assert_eq!(a.value.data(), b.value.data(), "{arch}: {} moved", a.name);
            }
        }
        let head_moved = before
            .params()
            .iter()
            .zip(model.params())
            .any(|(a, b)| a.name.starts_with("head.") && a.value.data() != b.value.data());
        assert!(head_moved, "{arch}: head did not train");
    }
}

#[test]
fn weights_round_trip_and_partial_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let cfg = SmallConfig {
        width: 4,
        ..SmallConfig::default()
    };
    let model: ModelGraph<f32> = Arch::InceptionS.build([3, 16, 16], &cfg, 9).unwrap();
    save_weights(&model, &path).unwrap();
    let mut fresh: ModelGraph<f32> = Arch::InceptionS.build([3, 16, 16], &cfg, 10).unwrap();
    let report = load_weights(&path, &mut fresh, false).unwrap();
    assert_eq!(report.loaded.len(), model.params().len());
    for (a, b) in model.params().iter().zip(fresh.params()) {
        assert_eq!(a.value.data(), b.value.data());
    }

    let backbone: Vec<_> = model
        .params()
        .iter()
        .filter(|p| p.name.starts_with("backbone."))
        .map(|p| (p.name.as_str(), &p.value))
        .collect();
    let entries = decode(&encode(&backbone)).unwrap();
    let mut target: ModelGraph<f32> = Arch::InceptionS.build([3, 16, 16], &cfg, 11).unwrap();
    assert!(load_entries(&entries, &mut target, false).is_err(), "strict load must reject a partial file");
    let report = load_entries(&entries, &mut target, true).unwrap();
    assert_eq!(report.loaded.len(), backbone.len());
    assert!(report.missing.iter().all(|n| n.starts_with("head.")));
    assert_eq!(report.loaded.len() + report.missing.len(), target.params().len());
    assert!(report.skipped.is_empty());

    let wider: ModelGraph<f32> = Arch::InceptionS
        .build([3, 16, 16], &SmallConfig { width: 8, ..cfg.clone() }, 0)
        .unwrap();
    save_weights(&wider, &path).unwrap();
    match load_weights(&path, &mut target, true) {
        Err(Error::ParamShape { name, .. }) => assert!(name.starts_with("backbone.")),
        other => panic!("expected a shape error, got {other:?}"),
    }
}
