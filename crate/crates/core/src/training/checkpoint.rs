//! Checkpoint directories.
//!
//! ```text
//! model.bin        current parameters (weight file format)
//! best.bin         parameters at the best epoch so far
//! optimizer.bin    optimizer slots, named m/<param> and v/<param>
//! checkpoint.json  config, history, optimizer step, frozen parameter names
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::early_stop::EarlyStopper;
use super::optim::Optimizer;
use super::trainer::{RunHistory, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::models::{self, ModelGraph};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    checkpoint_version: u32,
    seed: u64,
    epoch: usize,
    optimizer_step: u64,
    config: TrainConfig,
    history: RunHistory,
    frozen: Vec<String>,
}

pub fn checkpoint(state: &TrainState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    models::save_weights(&state.model, &dir.join("model.bin"))?;
    let best: Vec<(&str, &Tensor<f32>)> = state
        .model
        .params()
        .iter()
        .zip(&state.best)
        .map(|(p, v)| (p.name.as_str(), v))
        .collect();
    let path = dir.join("best.bin");
    fs::write(&path, models::encode(&best)).map_err(|e| Error::io(&path, e))?;
    let slots = state.optimizer.slots(&state.model);
    let slots: Vec<(&str, &Tensor<f32>)> = slots.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    let path = dir.join("optimizer.bin");
    fs::write(&path, models::encode(&slots)).map_err(|e| Error::io(&path, e))?;
    let sidecar = Sidecar {
        checkpoint_version: CHECKPOINT_VERSION,
        seed: state.config.seed,
        epoch: state.epoch(),
        optimizer_step: state.optimizer.step,
        config: state.config.clone(),
        history: state.history.clone(),
        frozen: state.model.params().iter().filter(|p| p.frozen).map(|p| p.name.clone()).collect(),
    };
    let path = dir.join("checkpoint.json");
    fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
}

/// Restores a training state into `template`, a freshly built model of the
/// same architecture.
pub fn resume(dir: &Path, mut template: ModelGraph<f32>) -> Result<TrainState> {
    let path = dir.join("checkpoint.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sc: Sidecar = serde_json::from_str(&text)?;
    if sc.checkpoint_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", sc.checkpoint_version)));
    }
    models::load_weights(&dir.join("model.bin"), &mut template, false)?;
    template.unfreeze_all();
    if !sc.frozen.is_empty() && template.freeze(|name| sc.frozen.iter().any(|f| f == name)).matched != sc.frozen.len() {
        return Err(Error::Format("checkpoint names frozen parameters the model lacks".into()));
    }

    let mut best_model = template.clone();
    models::load_weights(&dir.join("best.bin"), &mut best_model, false)?;
    let best = best_model.params().iter().map(|p| p.value.clone()).collect();

    let mut optimizer = Optimizer::new(sc.config.optimizer);
    optimizer.step = sc.optimizer_step;
    let slots = models::read_weights(&dir.join("optimizer.bin"))?
        .into_iter()
        .map(|(n, t)| (n, t.to::<f32>()))
        .collect();
    optimizer.set_slots(&template, slots)?;

    let mut stopper = EarlyStopper::new(sc.config.patience, sc.config.max_epochs);
    stopper.epoch = sc.epoch;
    stopper.best_epoch = sc.history.best_epoch;
    if let Some(b) = sc.history.best() {
        stopper.best_loss = b.val_loss;
    }
    Ok(TrainState {
        model: template,
        optimizer,
        config: sc.config,
        history: sc.history,
        stopper,
        best,
    })
}
