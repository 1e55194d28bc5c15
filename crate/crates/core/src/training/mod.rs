//! Mini-batch training with early stopping, checkpoints and the transfer
//! workflow.

pub mod checkpoint;
pub mod early_stop;
pub mod optim;
pub mod trainer;
pub mod transfer;

pub use checkpoint::{checkpoint, resume};
pub use early_stop::{early_stopping, Decision, EarlyStopper, StopOutcome};
pub use optim::{Optimizer, OptimizerConfig};
pub use trainer::{check_binary_output, evaluate, predict, train, train_step, EpochRecord, RunHistory, TrainConfig, TrainState};
pub use transfer::{backbone_weights, pretrain_transfer, ArmReport, Task, TransferConfig, TransferReport};
