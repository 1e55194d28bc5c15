//! Validation-loss early stopping.
//!
//! Epochs are numbered from 1. The best epoch is the first one reaching the
//! minimum validation loss (a later equal loss does not replace it).
//! Training stops at the end of the first epoch `e` with
//! `e − best_epoch > patience`, or at `max_epochs`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopper {
    pub patience: usize,
    pub max_epochs: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// This epoch set a new best.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        EarlyStopper {
            patience,
            max_epochs,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records the next epoch's validation loss. `Improved` still means
    /// training ends if `max_epochs` has been reached; check [`EarlyStopper::done`].
    pub fn update(&mut self, val_loss: f64) -> Decision {
        self.epoch += 1;
        if val_loss < self.best_loss || self.best_epoch == 0 {
            self.best_loss = val_loss;
            self.best_epoch = self.epoch;
            return Decision::Improved;
        }
        if self.epoch - self.best_epoch > self.patience || self.epoch >= self.max_epochs {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }

    pub fn done(&self) -> bool {
        self.epoch >= self.max_epochs || self.epoch - self.best_epoch > self.patience
    }
}

/// Outcome of replaying a validation-loss sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopOutcome {
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    /// True when the patience rule fired before `max_epochs`.
    pub early: bool,
}

/// Applies the rule to a scripted loss sequence. Losses beyond the stopping
/// point are ignored; a sequence that ends first stops at its last epoch.
pub fn early_stopping(val_losses: &[f64], patience: usize, max_epochs: usize) -> StopOutcome {
    let mut s = EarlyStopper::new(patience, max_epochs);
    for &l in val_losses.iter().take(max_epochs) {
        s.update(l);
        if s.done() {
            break;
        }
    }
    StopOutcome {
        stopped_epoch: s.epoch,
        best_epoch: s.best_epoch,
        early: s.epoch - s.best_epoch > patience,
    }
}
