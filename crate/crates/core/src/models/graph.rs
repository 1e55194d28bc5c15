//! Layer graph with named parameters, forward execution and backpropagation.

use std::collections::HashSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, Rng};
use crate::tensor::ops::{self, Mode};
use crate::tensor::{Cache, ConvSpec, GradTape, PoolSpec, Scalar, Tensor};

pub type NodeId = usize;
pub type ParamId = usize;

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are state, not optimization variables.
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in ±sqrt(6 / fan_in), for layers feeding a ReLU.
    KaimingUniform { fan_in: usize },
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), for the sigmoid output.
    XavierUniform { fan_in: usize, fan_out: usize },
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
    pub frozen: bool,
    pub init: Init,
}

impl<T> Param<T> {
    pub fn trainable(&self) -> bool {
        !self.frozen && !self.kind.is_buffer()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv2d {
        spec: ConvSpec,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        mean: ParamId,
        var: ParamId,
    },
    Relu,
    Sigmoid,
    MaxPool(PoolSpec),
    AvgPool(PoolSpec),
    GlobalAvgPool,
    Flatten,
    Dense {
        weight: ParamId,
        bias: ParamId,
    },
    Dropout {
        rate: f64,
    },
    Add,
    Concat,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::MaxPool(_) => "maxpool",
            Op::AvgPool(_) => "avgpool",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Flatten => "flatten",
            Op::Dense { .. } => "dense",
            Op::Dropout { .. } => "dropout",
            Op::Add => "add",
            Op::Concat => "concat",
        }
    }

    fn params(&self) -> Vec<ParamId> {
        match *self {
            Op::Conv2d { weight, bias, .. } => std::iter::once(weight).chain(bias).collect(),
            Op::BatchNorm { gamma, beta, mean, var } => vec![gamma, beta, mean, var],
            Op::Dense { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Per-sample output shape (batch axis omitted).
    pub shape: Vec<usize>,
    /// Projection convolutions on residual shortcuts; excluded from the
    /// conventional weighted-layer depth.
    pub shortcut: bool,
}

/// Result of [`ModelGraph::freeze`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub matched: usize,
    pub total: usize,
    pub frozen_fraction: f64,
}

/// A directed acyclic graph of layers. Nodes are stored in topological order
/// (every input id is smaller than the consumer's id), the first node is the
/// single input and the last node is the single output.
#[derive(Debug, Clone)]
pub struct ModelGraph<T = f32> {
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    head_start: Option<NodeId>,
}

impl<T: Scalar> ModelGraph<T> {
    /// New graph containing only an input node of per-sample shape `[C,H,W]`.
    pub fn new(input_shape: [usize; 3]) -> Self {
        ModelGraph {
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: Vec::new(),
                shape: input_shape.to_vec(),
                shortcut: false,
            }],
            params: Vec::new(),
            head_start: None,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].shape
    }

    pub fn output(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output()].shape
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// First node of the attached head, if any.
    pub fn head_start(&self) -> Option<NodeId> {
        self.head_start
    }

    pub(crate) fn mark_head(&mut self, start: NodeId) {
        self.head_start = Some(start);
    }

    pub fn count_ops(&self, kind: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// Convolutional and fully connected layers on the main path.
    pub fn weighted_layers(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Conv2d { .. } | Op::Dense { .. }) && !n.shortcut)
            .count()
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.kind.is_buffer())
            .map(|p| p.value.len())
            .sum()
    }

    // -- construction -------------------------------------------------------

    fn unique_name(&self, name: &str) -> Result<()> {
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(Error::Graph(format!("duplicate node name `{name}`")));
        }
        Ok(())
    }

    fn check_input(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id)
            .ok_or_else(|| Error::Graph(format!("unknown input node {id}")))
    }

    fn add_param(&mut self, name: String, shape: &[usize], kind: ParamKind, init: Init) -> ParamId {
        let value = match init {
            Init::Ones => Tensor::full(shape, T::one()),
            _ => Tensor::zeros(shape),
        };
        self.params.push(Param {
            name,
            value,
            kind,
            frozen: false,
            init,
        });
        self.params.len() - 1
    }

    fn push(&mut self, name: &str, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
            shape,
            shortcut: false,
        });
        self.nodes.len() - 1
    }

    fn spatial(&self, op: &'static str, id: NodeId) -> Result<[usize; 3]> {
        match self.check_input(id)?.shape[..] {
            [c, h, w] => Ok([c, h, w]),
            ref s => Err(Error::shape(op, format!("expects a [C,H,W] input, got {s:?}"))),
        }
    }

    pub fn conv(&mut self, name: &str, input: NodeId, spec: ConvSpec, bias: bool) -> Result<NodeId> {
        self.unique_name(name)?;
        let [c, h, w] = self.spatial("conv2d", input)?;
        let (oh, ow) = spec.output_dims(h, w).map_err(|e| Error::Graph(format!("{name}: {e}")))?;
        let fan_in = c * spec.kernel.0 * spec.kernel.1;
        let weight = self.add_param(
            format!("{name}.weight"),
            &[spec.out_channels, c, spec.kernel.0, spec.kernel.1],
            ParamKind::Weight,
            Init::KaimingUniform { fan_in },
        );
        let bias = bias.then(|| {
            self.add_param(format!("{name}.bias"), &[spec.out_channels], ParamKind::Bias, Init::Zeros)
        });
        Ok(self.push(name, Op::Conv2d { spec, weight, bias }, vec![input], vec![spec.out_channels, oh, ow]))
    }

    /// Marks the most recently added node as a shortcut projection.
    pub fn mark_shortcut(&mut self, id: NodeId) {
        self.nodes[id].shortcut = true;
    }

    pub fn batchnorm(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        self.unique_name(name)?;
        let shape = self.check_input(input)?.shape.clone();
        let c = shape[0];
        let gamma = self.add_param(format!("{name}.gamma"), &[c], ParamKind::Gamma, Init::Ones);
        let beta = self.add_param(format!("{name}.beta"), &[c], ParamKind::Beta, Init::Zeros);
        let mean = self.add_param(format!("{name}.running_mean"), &[c], ParamKind::RunningMean, Init::Zeros);
        let var = self.add_param(format!("{name}.running_var"), &[c], ParamKind::RunningVar, Init::Ones);
        Ok(self.push(name, Op::BatchNorm { gamma, beta, mean, var }, vec![input], shape))
    }

    pub fn relu(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        self.unary(name, input, Op::Relu)
    }

    pub fn sigmoid(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        self.unary(name, input, Op::Sigmoid)
    }

    pub fn dropout(&mut self, name: &str, input: NodeId, rate: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.unary(name, input, Op::Dropout { rate })
    }

    fn unary(&mut self, name: &str, input: NodeId, op: Op) -> Result<NodeId> {
        self.unique_name(name)?;
        let shape = self.check_input(input)?.shape.clone();
        Ok(self.push(name, op, vec![input], shape))
    }

    pub fn maxpool(&mut self, name: &str, input: NodeId, spec: PoolSpec) -> Result<NodeId> {
        self.pool(name, input, spec, true)
    }

    pub fn avgpool(&mut self, name: &str, input: NodeId, spec: PoolSpec) -> Result<NodeId> {
        self.pool(name, input, spec, false)
    }

    fn pool(&mut self, name: &str, input: NodeId, spec: PoolSpec, max: bool) -> Result<NodeId> {
        self.unique_name(name)?;
        let [c, h, w] = self.spatial("pool", input)?;
        let (oh, ow) = spec
            .output_dims(if max { "maxpool2d" } else { "avgpool2d" }, h, w)
            .map_err(|e| Error::Graph(format!("{name}: {e}")))?;
        let op = if max { Op::MaxPool(spec) } else { Op::AvgPool(spec) };
        Ok(self.push(name, op, vec![input], vec![c, oh, ow]))
    }

    pub fn global_avg_pool(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        self.unique_name(name)?;
        let [c, _, _] = self.spatial("global_avg_pool", input)?;
        Ok(self.push(name, Op::GlobalAvgPool, vec![input], vec![c]))
    }

    pub fn flatten(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        self.unique_name(name)?;
        let len = self.check_input(input)?.shape.iter().product();
        Ok(self.push(name, Op::Flatten, vec![input], vec![len]))
    }

    pub fn dense(&mut self, name: &str, input: NodeId, units: usize, init: Init) -> Result<NodeId> {
        self.unique_name(name)?;
        let d = match self.check_input(input)?.shape[..] {
            [d] => d,
            ref s => return Err(Error::shape("dense", format!("expects a flat input, got {s:?}"))),
        };
        let init = match init {
            Init::KaimingUniform { .. } => Init::KaimingUniform { fan_in: d },
            Init::XavierUniform { .. } => Init::XavierUniform { fan_in: d, fan_out: units },
            other => other,
        };
        let weight = self.add_param(format!("{name}.weight"), &[d, units], ParamKind::Weight, init);
        let bias = self.add_param(format!("{name}.bias"), &[units], ParamKind::Bias, Init::Zeros);
        Ok(self.push(name, Op::Dense { weight, bias }, vec![input], vec![units]))
    }

    /// Elementwise sum; both inputs must have identical shapes.
    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.unique_name(name)?;
        let (sa, sb) = (self.check_input(a)?.shape.clone(), self.check_input(b)?.shape.clone());
        if sa != sb {
            return Err(Error::Graph(format!(
                "{name}: cannot add {sa:?} and {sb:?}; the shortcut needs a projection"
            )));
        }
        Ok(self.push(name, Op::Add, vec![a, b], sa))
    }

    pub fn concat(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId> {
        self.unique_name(name)?;
        let mut channels = 0;
        let mut hw = None;
        for &i in inputs {
            let [c, h, w] = self.spatial("concat", i)?;
            if *hw.get_or_insert((h, w)) != (h, w) {
                return Err(Error::Graph(format!("{name}: branch spatial sizes differ")));
            }
            channels += c;
        }
        let (h, w) = hw.ok_or_else(|| Error::Graph(format!("{name}: no inputs")))?;
        Ok(self.push(name, Op::Concat, inputs.to_vec(), vec![channels, h, w]))
    }

    // -- parameters ---------------------------------------------------------

    /// Re-draws every parameter from its declared initializer. Each
    /// parameter has its own stream keyed by its name, so values do not
    /// depend on construction order.
    pub fn initialize(&mut self, seed: u64) {
        self.initialize_where(seed, |_| true);
    }

    /// Like [`ModelGraph::initialize`], restricted to parameters whose name matches.
    pub fn initialize_where(&mut self, seed: u64, select: impl Fn(&str) -> bool) {
        for p in self.params.iter_mut().filter(|p| select(&p.name)) {
            let mut rng = rng::stream(seed, Purpose::Init, rng::hash64(p.name.as_bytes()));
            p.value = match p.init {
                Init::Zeros => Tensor::zeros(p.value.shape()),
                Init::Ones => Tensor::full(p.value.shape(), T::one()),
                Init::KaimingUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::uniform(p.value.shape(), -bound, bound, &mut rng)
                }
                Init::XavierUniform { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::uniform(p.value.shape(), -bound, bound, &mut rng)
                }
            };
        }
    }

    /// Freezes every parameter whose name matches `selector`.
    pub fn freeze(&mut self, selector: impl Fn(&str) -> bool) -> FreezeReport {
        let mut matched = 0;
        for p in &mut self.params {
            if selector(&p.name) {
                p.frozen = true;
                matched += 1;
            }
        }
        if matched == 0 {
            warn!("freeze selector matched no parameters; model unchanged");
        }
        self.freeze_report(matched)
    }

    pub fn freeze_prefix(&mut self, prefix: &str) -> FreezeReport {
        self.freeze(|name| name.starts_with(prefix))
    }

    fn freeze_report(&self, matched: usize) -> FreezeReport {
        let total = self.params.len();
        FreezeReport {
            matched,
            total,
            frozen_fraction: if total == 0 { 0.0 } else { matched as f64 / total as f64 },
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = false);
    }

    pub fn frozen_count(&self) -> usize {
        self.params.iter().filter(|p| p.frozen).count()
    }

    // -- execution ----------------------------------------------------------

    fn check_batch(&self, x: &Tensor<T>) -> Result<usize> {
        let expect = self.input_shape();
        if x.rank() != expect.len() + 1 || &x.shape()[1..] != expect {
            return Err(Error::shape(
                "forward",
                format!("input batch {:?} does not match model input {expect:?}", x.shape()),
            ));
        }
        Ok(x.shape()[0])
    }

    fn bn_mode(&self, gamma: ParamId, mode: Mode) -> Mode {
        // Frozen batchnorm layers behave as at inference and keep their statistics.
        if mode == Mode::Train && !self.params[gamma].frozen {
            Mode::Train
        } else {
            Mode::Infer
        }
    }

    fn eval_node(
        &self,
        id: NodeId,
        inputs: &[&Tensor<T>],
        mode: Mode,
        rng: Option<&mut Rng>,
        updates: &mut Vec<(ParamId, Tensor<T>)>,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        let node = &self.nodes[id];
        let p = |pid: ParamId| &self.params[pid].value;
        let out = match node.op {
            Op::Input => unreachable!("input node is not evaluated"),
            Op::Conv2d { ref spec, weight, bias } => {
                let (y, cols) = ops::conv2d_forward(inputs[0], p(weight), bias.map(p), spec)?;
                let cache = if mode == Mode::Train { Cache::Conv { cols } } else { Cache::None };
                (y, cache)
            }
            Op::BatchNorm { gamma, beta, mean, var } => {
                let bn_mode = self.bn_mode(gamma, mode);
                let (mut rm, mut rv) = (p(mean).clone(), p(var).clone());
                let (y, cache) = ops::batchnorm_forward(
                    inputs[0],
                    p(gamma),
                    p(beta),
                    &mut rm,
                    &mut rv,
                    T::from_f64(BN_MOMENTUM),
                    T::from_f64(ops::BN_EPS),
                    bn_mode,
                )?;
                if bn_mode == Mode::Train {
                    updates.push((mean, rm));
                    updates.push((var, rv));
                }
                (y, Cache::BatchNorm(cache))
            }
            Op::Relu => (ops::relu(inputs[0]), Cache::None),
            Op::Sigmoid => (ops::sigmoid(inputs[0]), Cache::None),
            Op::MaxPool(ref spec) => {
                let (y, argmax) = ops::maxpool2d_forward(inputs[0], spec)?;
                (y, Cache::MaxPool { argmax })
            }
            Op::AvgPool(ref spec) => (ops::avgpool2d(inputs[0], spec)?, Cache::None),
            Op::GlobalAvgPool => (ops::global_avg_pool(inputs[0])?, Cache::None),
            Op::Flatten => {
                let n = inputs[0].shape()[0];
                let len = node.shape[0];
                (inputs[0].clone().reshape(&[n, len])?, Cache::None)
            }
            Op::Dense { weight, bias } => (ops::dense(inputs[0], p(weight), p(bias))?, Cache::None),
            Op::Dropout { rate } => match (mode, rng) {
                (Mode::Train, Some(rng)) => {
                    let (y, mask) = ops::dropout(inputs[0], rate, rng, Mode::Train)?;
                    (y, Cache::Dropout(mask))
                }
                (Mode::Train, None) => {
                    return Err(Error::Config("training forward pass needs a dropout generator".into()))
                }
                (Mode::Infer, _) => (inputs[0].clone(), Cache::Dropout(None)),
            },
            Op::Add => (ops::add(inputs[0], inputs[1])?, Cache::None),
            Op::Concat => (ops::concat_channels(inputs)?, Cache::None),
        };
        Ok(out)
    }

    /// Inference pass. Dropout is identity and batchnorm uses running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        let mut last_use = vec![0usize; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                last_use[i] = id;
            }
        }
        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        values[0] = Some(x.clone());
        let mut scratch = Vec::new();
        for id in 1..self.nodes.len() {
            let inputs: Vec<&Tensor<T>> = self.nodes[id]
                .inputs
                .iter()
                .map(|&i| values[i].as_ref().expect("inputs precede consumers"))
                .collect();
            let (y, _) = self.eval_node(id, &inputs, Mode::Infer, None, &mut scratch)?;
            values[id] = Some(y);
            for &i in &self.nodes[id].inputs {
                if last_use[i] == id {
                    values[i] = None;
                }
            }
        }
        Ok(values.pop().flatten().expect("output node evaluated"))
    }

    /// Inference pass that keeps every intermediate value.
    pub fn forward_all(&self, x: &Tensor<T>) -> Result<GradTape<T>> {
        self.check_batch(x)?;
        let mut tape = GradTape::new(self.params.iter().map(|p| p.name.clone()).collect(), self.nodes.len());
        tape.record(x.clone(), Cache::None);
        let mut scratch = Vec::new();
        for id in 1..self.nodes.len() {
            let inputs: Vec<&Tensor<T>> = self.nodes[id].inputs.iter().map(|&i| &tape.values[i]).collect();
            let (y, c) = self.eval_node(id, &inputs, Mode::Infer, None, &mut scratch)?;
            tape.record(y, c);
        }
        Ok(tape)
    }

    /// Training pass: batchnorm layers that are not frozen use batch
    /// statistics and update their running estimates; dropout draws its
    /// masks from `rng`. Returns the tape needed by [`ModelGraph::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<GradTape<T>> {
        self.check_batch(x)?;
        let mut tape = GradTape::new(self.params.iter().map(|p| p.name.clone()).collect(), self.nodes.len());
        tape.record(x.clone(), Cache::None);
        let mut updates = Vec::new();
        for id in 1..self.nodes.len() {
            let inputs: Vec<&Tensor<T>> = self.nodes[id].inputs.iter().map(|&i| &tape.values[i]).collect();
            let (y, c) = self.eval_node(id, &inputs, Mode::Train, Some(&mut *rng), &mut updates)?;
            tape.record(y, c);
        }
        for (pid, value) in updates {
            self.params[pid].value = value;
        }
        Ok(tape)
    }

    /// Nodes whose output gradient is needed: those with a trainable
    /// parameter at or upstream of them.
    fn requires_grad(&self) -> Vec<bool> {
        let mut req = vec![false; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            let own = node.op.params().iter().any(|&p| self.params[p].trainable());
            req[id] = own || node.inputs.iter().any(|&i| req[i]);
        }
        req
    }

    /// Backpropagates `grad` (the loss gradient w.r.t. the output of node
    /// `from`) and stores parameter gradients in the tape. Frozen parameters
    /// and running statistics receive no gradient.
    pub fn backward_from(&self, tape: &mut GradTape<T>, from: NodeId, grad: Tensor<T>) -> Result<()> {
        if tape.values.len() != self.nodes.len() {
            return Err(Error::Graph("tape was recorded on a different graph".into()));
        }
        if grad.shape() != tape.values[from].shape() {
            return Err(Error::shape(
                "backward",
                format!("seed gradient {:?} vs node output {:?}", grad.shape(), tape.values[from].shape()),
            ));
        }
        let req = self.requires_grad();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[from] = Some(grad);
        let mut param_grads: Vec<(ParamId, Tensor<T>)> = Vec::new();

        for id in (1..=from).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !req[id] {
                continue;
            }
            let node = &self.nodes[id];
            let need = |i: usize| req[node.inputs[i]];
            let input = |i: usize| &tape.values[node.inputs[i]];
            let mut input_grads: Vec<Option<Tensor<T>>> = vec![None; node.inputs.len()];
            let mut set_param = |pid: ParamId, value: Tensor<T>| {
                if self.params[pid].trainable() {
                    param_grads.push((pid, value));
                }
            };
            match (&node.op, &tape.caches[id]) {
                (Op::Conv2d { spec, weight, bias }, Cache::Conv { cols }) => {
                    let cg = ops::conv2d_backward(input(0).shape(), cols, &self.params[*weight].value, &g, spec, need(0))?;
                    input_grads[0] = cg.input;
                    set_param(*weight, cg.weights);
                    if let Some(b) = bias {
                        set_param(*b, cg.bias);
                    }
                }
                (Op::BatchNorm { gamma, beta, .. }, Cache::BatchNorm(cache)) => {
                    let bg = ops::batchnorm_backward(cache, &self.params[*gamma].value, &g)?;
                    input_grads[0] = Some(bg.input);
                    set_param(*gamma, bg.gamma);
                    set_param(*beta, bg.beta);
                }
                (Op::Relu, _) => input_grads[0] = Some(ops::relu_backward(&tape.values[id], &g)),
                (Op::Sigmoid, _) => input_grads[0] = Some(ops::sigmoid_backward(&tape.values[id], &g)),
                (Op::MaxPool(_), Cache::MaxPool { argmax }) => {
                    input_grads[0] = Some(ops::maxpool2d_backward(input(0).shape(), argmax, &g));
                }
                (Op::AvgPool(spec), _) => {
                    input_grads[0] = Some(ops::avgpool2d_backward(input(0).shape(), spec, &g)?);
                }
                (Op::GlobalAvgPool, _) => {
                    input_grads[0] = Some(ops::global_avg_pool_backward(input(0).shape(), &g));
                }
                (Op::Flatten, _) => input_grads[0] = Some(g.reshape(input(0).shape())?),
                (Op::Dense { weight, bias }, _) => {
                    let dg = ops::dense_backward(input(0), &self.params[*weight].value, &g, need(0))?;
                    input_grads[0] = dg.input;
                    set_param(*weight, dg.weights);
                    set_param(*bias, dg.bias);
                }
                (Op::Dropout { .. }, Cache::Dropout(mask)) => {
                    input_grads[0] = Some(ops::dropout_backward(mask.as_deref(), &g));
                }
                (Op::Add, _) => {
                    input_grads[0] = Some(g.clone());
                    input_grads[1] = Some(g);
                }
                (Op::Concat, _) => {
                    let channels: Vec<usize> = node.inputs.iter().map(|&i| tape.values[i].shape()[1]).collect();
                    for (slot, part) in input_grads.iter_mut().zip(ops::split_channels(&g, &channels)?) {
                        *slot = Some(part);
                    }
                }
                (op, _) => {
                    return Err(Error::Graph(format!(
                        "node `{}` ({}) has no saved state; run forward_train first",
                        node.name,
                        op.kind()
                    )))
                }
            }
            for (k, ig) in input_grads.into_iter().enumerate() {
                let src = node.inputs[k];
                if let (Some(ig), true) = (ig, req[src]) {
                    match &mut grads[src] {
                        Some(acc) => acc.add_assign(&ig),
                        slot => *slot = Some(ig),
                    }
                }
            }
        }
        let mut seen = HashSet::new();
        for (pid, value) in param_grads {
            if !seen.insert(pid) {
                return Err(Error::Graph(format!("parameter `{}` is shared between nodes", self.params[pid].name)));
            }
            tape.grads[pid] = Some(value);
        }
        Ok(())
    }

    /// Backpropagates from the model output.
    pub fn backward(&self, tape: &mut GradTape<T>, grad_output: Tensor<T>) -> Result<()> {
        self.backward_from(tape, self.output(), grad_output)
    }
}
