use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::early_stop::{Decision, EarlyStopper};
use super::optim::{Optimizer, OptimizerConfig};
use crate::data::{AugmentConfig, TensorDataset};
use crate::error::{Error, Result};
use crate::models::{ModelGraph, Op};
use crate::rng::{self, derive_seed, Purpose, Rng};
use crate::tensor::{ops, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Training-split augmentation, redrawn every epoch; `None` disables it.
    pub augment: Option<AugmentConfig>,
    /// Parameters whose name starts with this prefix are frozen before training.
    pub freeze_selector: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 50,
            patience: 5,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            augment: Some(AugmentConfig::default()),
            freeze_selector: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_epochs, patience and batch_size must all be ≥ 1".into(),
            ));
        }
        self.optimizer.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    /// Seconds spent training. Not part of the reproducible record, so it is
    /// left out of serialized histories.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Checks that `model` ends in a single sigmoid unit.
pub fn check_binary_output<T: Scalar>(model: &ModelGraph<T>) -> Result<()> {
    let last = &model.nodes()[model.output()];
    if last.op != Op::Sigmoid || last.shape != [1] {
        return Err(Error::Graph(format!(
            "model must end in a single sigmoid unit, found `{}` ({}) with shape {:?}",
            last.name,
            last.op.kind(),
            last.shape
        )));
    }
    Ok(())
}

fn labels_as<T: Scalar>(labels: &[f32]) -> Vec<T> {
    labels.iter().map(|&l| T::from_f64(l as f64)).collect()
}

/// One forward, backward and update on `x`. Returns the batch loss.
pub fn train_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    x: &Tensor<T>,
    labels: &[T],
    opt: &mut Optimizer<T>,
    rng: &mut Rng,
) -> Result<f64> {
    check_binary_output(model)?;
    let mut tape = model.forward_train(x, rng)?;
    let probs = tape.output();
    let loss = ops::bce_loss(probs, labels)?.as_f64();
    let out = model.output();
    let logit = model.nodes()[out].inputs[0];
    let g = ops::bce_logit_backward(probs, labels)?;
    model.backward_from(&mut tape, logit, g)?;
    let grads = tape.into_grads();
    opt.apply(model, &grads)?;
    Ok(loss)
}

/// Inference-mode probabilities for every sample, in dataset order.
pub fn predict(model: &ModelGraph<f32>, ds: &TensorDataset, batch_size: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = ds.batch(chunk, None)?;
        out.extend_from_slice(model.forward(&x)?.data());
    }
    Ok(out)
}

/// Mean BCE and accuracy at threshold 0.5.
pub fn evaluate(model: &ModelGraph<f32>, ds: &TensorDataset, batch_size: usize) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let probs = predict(model, ds, batch_size)?;
    let p = Tensor::new(vec![probs.len(), 1], probs.clone())?;
    let loss = ops::bce_loss(&p.cast::<f64>(), &labels_as::<f64>(&ds.labels))?;
    let correct = probs
        .iter()
        .zip(&ds.labels)
        .filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5))
        .count();
    Ok((loss, correct as f64 / ds.len() as f64))
}

/// Everything needed to continue a run: resuming from a saved state
/// reproduces the uninterrupted run exactly, since every random stream is
/// keyed by `(seed, epoch, batch)` rather than carried between epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: ModelGraph<f32>,
    pub optimizer: Optimizer<f32>,
    pub config: TrainConfig,
    pub history: RunHistory,
    pub stopper: EarlyStopper,
    /// Parameter values at the best epoch so far.
    pub best: Vec<Tensor<f32>>,
}

impl TrainState {
    pub fn new(mut model: ModelGraph<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_binary_output(&model)?;
        if let Some(prefix) = &config.freeze_selector {
            let report = model.freeze_prefix(prefix);
            info!("froze {}/{} parameters matching `{prefix}`", report.matched, report.total);
        }
        let best = model.params().iter().map(|p| p.value.clone()).collect();
        Ok(TrainState {
            optimizer: Optimizer::new(config.optimizer),
            stopper: EarlyStopper::new(config.patience, config.max_epochs),
            history: RunHistory::default(),
            model,
            config,
            best,
        })
    }

    pub fn epoch(&self) -> usize {
        self.stopper.epoch
    }

    pub fn finished(&self) -> bool {
        self.stopper.epoch > 0 && self.stopper.done()
    }

    /// Runs one epoch and returns the early-stopping decision.
    pub fn run_epoch(&mut self, train: &TensorDataset, val: &TensorDataset) -> Result<Decision> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data("training and validation sets must be non-empty".into()));
        }
        let epoch = self.stopper.epoch + 1;
        let cfg = &self.config;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Shuffle, epoch as u64));
        let aug_seed = derive_seed(cfg.seed, epoch as u64);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = train.batch(chunk, cfg.augment.as_ref().map(|a| (a, derive_seed(aug_seed, a.seed))))?;
            let mut rng = rng::stream(cfg.seed, Purpose::Dropout, ((epoch as u64) << 24) | b as u64);
            let loss = train_step(&mut self.model, &x, &labels, &mut self.optimizer, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss is {loss} at epoch {epoch}, batch {}", b + 1)));
            }
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_accuracy) = evaluate(&self.model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("validation loss is {val_loss} at epoch {epoch}")));
        }
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {val_accuracy:.4}");
        self.history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        let decision = self.stopper.update(val_loss);
        if decision == Decision::Improved {
            self.best = self.model.params().iter().map(|p| p.value.clone()).collect();
        }
        self.history.best_epoch = self.stopper.best_epoch;
        self.history.stopped_epoch = epoch;
        self.history.early_stopped = epoch - self.stopper.best_epoch > cfg.patience;
        Ok(decision)
    }

    /// Trains until early stopping or the epoch cap. `after_epoch` runs at
    /// the end of each epoch, e.g. to write a checkpoint.
    pub fn run(
        &mut self,
        train: &TensorDataset,
        val: &TensorDataset,
        mut after_epoch: impl FnMut(&TrainState) -> Result<()>,
    ) -> Result<()> {
        let start = Instant::now();
        while !self.finished() {
            self.run_epoch(train, val)?;
            after_epoch(self)?;
        }
        self.history.wall_time_s += start.elapsed().as_secs_f64();
        Ok(())
    }

    /// The model with best-epoch weights restored, and the history.
    pub fn finish(mut self) -> (ModelGraph<f32>, RunHistory) {
        for (p, v) in self.model.params_mut().iter_mut().zip(self.best) {
            p.value = v;
        }
        info!(
            "stopped after epoch {}, best epoch {}",
            self.history.stopped_epoch, self.history.best_epoch
        );
        (self.model, self.history)
    }
}

/// Trains `model` and returns it with the best validation-loss weights.
pub fn train(
    model: ModelGraph<f32>,
    train_set: &TensorDataset,
    val_set: &TensorDataset,
    cfg: &TrainConfig,
) -> Result<(ModelGraph<f32>, RunHistory)> {
    let mut state = TrainState::new(model, cfg.clone())?;
    state.run(train_set, val_set, |_| Ok(()))?;
    Ok(state.finish())
}
