//! Source-task pretraining followed by frozen-backbone fine-tuning, compared
//! against training the same network from random initialization.

use log::info;
use serde::{Deserialize, Serialize};

use super::trainer::{evaluate, train, RunHistory, TrainConfig};
use crate::data::TensorDataset;
use crate::error::{Error, Result};
use crate::models::{self, Arch, ModelGraph, SmallConfig, BACKBONE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub arch: Arch,
    pub model: SmallConfig,
    pub train: TrainConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            arch: Arch::ResnetS,
            model: SmallConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Train/validation sets and an optional held-out test set for one task.
#[derive(Debug, Clone, Copy)]
pub struct Task<'a> {
    pub train: &'a TensorDataset,
    pub val: &'a TensorDataset,
    pub test: Option<&'a TensorDataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub history: RunHistory,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub arch: Arch,
    pub seed: u64,
    pub source: ArmReport,
    pub pretrained: ArmReport,
    pub random: ArmReport,
    /// Backbone checksum after loading the source weights and after
    /// fine-tuning; equal when the freeze held.
    pub backbone_checksum_loaded: u64,
    pub backbone_checksum_final: u64,
}

/// Weight file bytes holding only the backbone parameters.
pub fn backbone_weights(model: &ModelGraph<f32>) -> Vec<u8> {
    let entries: Vec<_> = model
        .params()
        .iter()
        .filter(|p| p.name.starts_with(BACKBONE))
        .map(|p| (p.name.as_str(), &p.value))
        .collect();
    models::encode(&entries)
}

fn arm(model: &ModelGraph<f32>, history: RunHistory, task: Task, batch: usize) -> Result<ArmReport> {
    let (_, val_accuracy) = evaluate(model, task.val, batch)?;
    let test_accuracy = task.test.map(|t| evaluate(model, t, batch).map(|r| r.1)).transpose()?;
    Ok(ArmReport {
        history,
        val_accuracy,
        test_accuracy,
    })
}

fn input_shape(task: Task) -> Result<[usize; 3]> {
    task.train
        .image_shape()
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Data("transfer task has no training images".into()))
}

fn is_backbone(name: &str) -> bool {
    name.starts_with(BACKBONE)
}

/// (a) trains backbone + head on `source`; (b) keeps the backbone weights;
/// (c) builds a fresh network, loads the backbone and freezes it; (d)
/// fine-tunes on `target`. The random arm trains the same network on
/// `target` from scratch with the same seed. Returns the report and the
/// fine-tuned model.
pub fn pretrain_transfer(source: Task, target: Task, cfg: &TransferConfig) -> Result<(TransferReport, ModelGraph<f32>)> {
    let seed = cfg.train.seed;
    let batch = cfg.train.batch_size;
    let input = input_shape(source)?;
    if input_shape(target)? != input {
        return Err(Error::Data("source and target images differ in shape".into()));
    }
    let unfrozen = TrainConfig {
        freeze_selector: None,
        ..cfg.train.clone()
    };

    let src_model = cfg.arch.build(input, &cfg.model, models_seed(seed, 0))?;
    let (src_model, src_hist) = train(src_model, source.train, source.val, &unfrozen)?;
    let source_report = arm(&src_model, src_hist, source, batch)?;
    info!("source task: val accuracy {:.4}", source_report.val_accuracy);
    let backbone = models::decode(&backbone_weights(&src_model))?;

    let mut model = cfg.arch.build(input, &cfg.model, models_seed(seed, 1))?;
    let report = models::load_entries(&backbone, &mut model, true)?;
    if report.loaded.is_empty() {
        return Err(Error::Graph("no backbone parameters were transferred".into()));
    }
    let loaded = models::params_checksum(&model, is_backbone);
    let frozen = TrainConfig {
        freeze_selector: Some(BACKBONE.to_string()),
        ..cfg.train.clone()
    };
    let (model, hist) = train(model, target.train, target.val, &frozen)?;
    let final_sum = models::params_checksum(&model, is_backbone);
    let pretrained = arm(&model, hist, target, batch)?;

    let scratch = cfg.arch.build(input, &cfg.model, models_seed(seed, 1))?;
    let (scratch, hist) = train(scratch, target.train, target.val, &unfrozen)?;
    let random = arm(&scratch, hist, target, batch)?;
    info!(
        "target task: pretrained {:.4}, random init {:.4}",
        pretrained.val_accuracy, random.val_accuracy
    );

    Ok((
        TransferReport {
            arch: cfg.arch,
            seed,
            source: source_report,
            pretrained,
            random,
            backbone_checksum_loaded: loaded,
            backbone_checksum_final: final_sum,
        },
        model,
    ))
}

/// Initialization seed for the source (`k = 0`) and target (`k = 1`) networks.
fn models_seed(seed: u64, k: u64) -> u64 {
    crate::rng::derive_seed(seed, k)
}
