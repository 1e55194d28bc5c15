use std::path::Path;

use super::augment::{augment, AugmentConfig};
use super::image::load_image;
use super::record::{resolve_path, SampleManifest, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded images held in memory, each `[3,H,W]`, with binary labels.
#[derive(Debug, Clone, Default)]
pub struct TensorDataset {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<f32>,
    pub records: Vec<SampleRecord>,
}

impl TensorDataset {
    /// Loads the records of `split` (all records when `None`), resolving
    /// relative paths against `base`.
    pub fn from_manifest(manifest: &SampleManifest, base: &Path, split: Option<Split>, size: (usize, usize)) -> Result<Self> {
        let mut ds = TensorDataset::default();
        for r in manifest.records.iter().filter(|r| split.is_none_or(|s| r.split == s)) {
            ds.images.push(load_image(&resolve_path(base, &r.image_path), size)?);
            ds.labels.push(r.class.label());
            ds.records.push(r.clone());
        }
        Ok(ds)
    }

    pub fn from_parts(images: Vec<Tensor<f32>>, labels: Vec<f32>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Data(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|t| t.shape() != first.shape()) {
                return Err(Error::Data("images differ in shape".into()));
            }
        }
        Ok(TensorDataset {
            images,
            labels,
            records: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        TensorDataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            records: if self.records.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.records[i].clone()).collect()
            },
        }
    }

    /// Stacks the selected samples into `[N,3,H,W]`. With `augment`, sample
    /// `i` gets the transform drawn for `(seed, i)`.
    pub fn batch(&self, idx: &[usize], aug: Option<(&AugmentConfig, u64)>) -> Result<(Tensor<f32>, Vec<f32>)> {
        let x = match aug {
            Some((cfg, seed)) => {
                let items = idx
                    .iter()
                    .map(|&i| augment(&self.images[i], cfg, seed, i as u64))
                    .collect::<Result<Vec<_>>>()?;
                Tensor::stack(&items.iter().collect::<Vec<_>>())?
            }
            None => Tensor::stack(&idx.iter().map(|&i| &self.images[i]).collect::<Vec<_>>())?,
        };
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}
