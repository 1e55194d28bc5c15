//! Binary image classification of Portuguese man-of-war (*Physalia physalis*)
//! photographs with convolutional networks trained from scratch or by
//! transfer learning.
//!
//! - [`tensor`]: NCHW tensors and layer kernels with hand-written gradients.
//! - [`models`]: layer graphs, VGG/ResNet/Inception builders, the fine-tuning
//!   head, freezing and the weight file format.
//! - [`data`]: manifests, ingestion, stratified splits, image loading and
//!   augmentation, plus a synthetic dataset generator.
//! - [`training`]: BCE training with early stopping, checkpoints and the
//!   pretrain → freeze → fine-tune workflow.
//! - [`eval`]: confusion matrices, metrics and report emission.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
