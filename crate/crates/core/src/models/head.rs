use serde::{Deserialize, Serialize};

use super::graph::{Init, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::{PoolSpec, Scalar};

pub const HEAD: &str = "head.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadPool {
    /// Average over each whole channel plane.
    Global,
    /// Windowed average pooling followed by flattening.
    Window { size: usize, stride: usize },
}

/// Classification head: average pool → flatten → dense(ReLU) → dropout →
/// dense(1) → sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub pool: HeadPool,
    pub hidden_width: usize,
    pub dropout_rate: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            pool: HeadPool::Global,
            hidden_width: 256,
            dropout_rate: 0.30,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(Error::Config("head hidden_width must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "head dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Appends the binary head to `backbone`. New parameters are zero until the
/// caller initializes them; see [`ModelGraph::initialize`] or
/// [`initialize_head`].
pub fn attach_head<T: Scalar>(mut backbone: ModelGraph<T>, cfg: &HeadConfig) -> Result<ModelGraph<T>> {
    cfg.validate()?;
    if backbone.head_start().is_some() {
        return Err(Error::Graph("model already has a head attached".into()));
    }
    let feat = backbone.output();
    let pooled = match cfg.pool {
        HeadPool::Global => backbone.global_avg_pool("head.pool", feat)?,
        HeadPool::Window { size, stride } => backbone.avgpool("head.pool", feat, PoolSpec::new(size, stride))?,
    };
    let start = pooled;
    let x = backbone.flatten("head.flatten", pooled)?;
    let x = backbone.dense("head.fc1", x, cfg.hidden_width, Init::KaimingUniform { fan_in: 0 })?;
    let x = backbone.relu("head.fc1.relu", x)?;
    let x = backbone.dropout("head.dropout", x, cfg.dropout_rate)?;
    let x = backbone.dense("head.fc2", x, 1, Init::XavierUniform { fan_in: 0, fan_out: 0 })?;
    backbone.sigmoid("head.sigmoid", x)?;
    backbone.mark_head(start);
    Ok(backbone)
}

/// Draws fresh values for the head parameters only.
pub fn initialize_head<T: Scalar>(model: &mut ModelGraph<T>, seed: u64) {
    model.initialize_where(seed, |name| name.starts_with(HEAD));
}
