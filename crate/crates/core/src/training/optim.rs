use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerConfig {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { lr: f64, momentum: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig::SgdMomentum { lr, momentum }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::SgdMomentum { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr >= 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            OptimizerConfig::SgdMomentum { lr, momentum } => lr >= 0.0 && (0.0..1.0).contains(&momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer with per-parameter slots (Adam moments or SGD velocity),
/// indexed like the model's parameter list.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    pub step: u64,
    pub(crate) first: Vec<Option<Tensor<T>>>,
    pub(crate) second: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Updates every trainable parameter that has a gradient.
    ///
    /// Adam: `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
    /// `p ← p − lr·√(1−β2ᵗ)/(1−β1ᵗ) · m/(√v + ε)`.
    /// SGD: `u ← μ·u − lr·g`, `p ← p + u`.
    pub fn apply(&mut self, model: &mut ModelGraph<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        let n = model.params().len();
        if grads.len() != n {
            return Err(Error::Graph(format!("{} gradients for {n} parameters", grads.len())));
        }
        self.first.resize(n, None);
        self.second.resize(n, None);
        self.step += 1;
        let t = self.step as i32;
        for (i, (p, g)) in model.params_mut().iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if !p.trainable() {
                continue;
            }
            if g.shape() != p.value.shape() {
                return Err(Error::shape("optimizer", format!("gradient for `{}` has shape {:?}", p.name, g.shape())));
            }
            match self.config {
                OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
                    let step = T::from_f64(lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t)));
                    let eps = T::from_f64(eps);
                    let m = self.first[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self.second[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
                    let it = p.value.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data());
                    for (((w, m), v), &g) in it {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        *w -= step * *m / (v.sqrt() + eps);
                    }
                }
                OptimizerConfig::SgdMomentum { lr, momentum } => {
                    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
                    let u = self.first[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
                    for ((w, u), &g) in p.value.data_mut().iter_mut().zip(u.data_mut()).zip(g.data()) {
                        *u = mu * *u - lr * g;
                        *w += *u;
                    }
                }
            }
        }
        Ok(())
    }

    /// Slot tensors as `(name, tensor)` pairs for serialization, named
    /// `m/<param>` and `v/<param>`.
    pub fn slots<'a>(&'a self, model: &'a ModelGraph<T>) -> Vec<(String, &'a Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, slots) in [("m/", &self.first), ("v/", &self.second)] {
            for (p, s) in model.params().iter().zip(slots) {
                if let Some(s) = s {
                    out.push((format!("{prefix}{}", p.name), s));
                }
            }
        }
        out
    }

    /// Restores slots saved by [`Optimizer::slots`].
    pub fn set_slots(&mut self, model: &ModelGraph<T>, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        let n = model.params().len();
        self.first = vec![None; n];
        self.second = vec![None; n];
        for (name, t) in entries {
            let (slots, pname) = if let Some(p) = name.strip_prefix("m/") {
                (&mut self.first, p)
            } else if let Some(p) = name.strip_prefix("v/") {
                (&mut self.second, p)
            } else {
                return Err(Error::Format(format!("unknown optimizer slot `{name}`")));
            };
            let id = model
                .param_id(pname)
                .ok_or_else(|| Error::Format(format!("optimizer slot for unknown parameter `{pname}`")))?;
            slots[id] = Some(t);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Init;

    /// A model whose only trainable parameter is the 1×1 dense weight.
    fn scalar_model(w: f64) -> ModelGraph<f64> {
        let mut g = ModelGraph::new([1, 1, 1]);
        let x = g.flatten("flat", 0).unwrap();
        g.dense("fc", x, 1, Init::Zeros).unwrap();
        g.params_mut()[0].value = Tensor::scalar(w).reshape(&[1, 1]).unwrap();
        g.params_mut()[1].frozen = true;
        g
    }

    fn grad_of(model: &ModelGraph<f64>, optimum: f64) -> Vec<Option<Tensor<f64>>> {
        // f(w) = (w − optimum)², f' = 2(w − optimum)
        let w = model.params()[0].value.data()[0];
        vec![Some(Tensor::scalar(2.0 * (w - optimum)).reshape(&[1, 1]).unwrap()), None]
    }

    #[test]
    fn sgd_step_is_lr_times_gradient() {
        let mut m = scalar_model(3.0);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0));
        let g = grad_of(&m, 1.0);
        opt.apply(&mut m, &g).unwrap();
        assert_eq!(m.params()[0].value.data()[0], 3.0 - 0.1 * 4.0);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut m = scalar_model(3.0);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.9));
        for _ in 0..2 {
            let g = grad_of(&m, 1.0);
            opt.apply(&mut m, &g).unwrap();
        }
        // u1 = −0.4, w1 = 2.6; g2 = 3.2, u2 = 0.9·(−0.4) − 0.32 = −0.68
        assert!((m.params()[0].value.data()[0] - (2.6 - 0.68)).abs() < 1e-12);
    }

    #[test]
    fn adam_matches_closed_form() {
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-7);
        let mut m = scalar_model(3.0);
        let mut opt = Optimizer::new(OptimizerConfig::Adam { lr, beta1: b1, beta2: b2, eps });
        let (mut w, mut mm, mut vv) = (3.0f64, 0.0, 0.0);
        for t in 1..=3 {
            let g = 2.0 * (w - 1.0);
            mm = b1 * mm + (1.0 - b1) * g;
            vv = b2 * vv + (1.0 - b2) * g * g;
            let mhat = mm / (1.0 - b1.powi(t));
            let vhat = vv / (1.0 - b2.powi(t));
            // ε enters before the bias correction of v
            w -= lr * mhat / (vhat.sqrt() + eps / (1.0 - b2.powi(t)).sqrt());
            let grads = grad_of(&m, 1.0);
            opt.apply(&mut m, &grads).unwrap();
            assert!((m.params()[0].value.data()[0] - w).abs() < 1e-12, "step {t}");
        }
        assert!(w < 3.0);
    }

    #[test]
    fn zero_lr_and_frozen_are_bit_identical() {
        let mut m = scalar_model(3.0);
        let before = m.params()[1].value.clone();
        let mut opt = Optimizer::new(OptimizerConfig::Adam { lr: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-7 });
        let mut g = grad_of(&m, 1.0);
        g[1] = Some(Tensor::full(&[1], 5.0));
        opt.apply(&mut m, &g).unwrap();
        assert_eq!(m.params()[0].value.data()[0], 3.0);
        assert_eq!(m.params()[1].value, before);
    }
}
