//! Weight file format.
//!
//! ```text
//! magic      6 bytes   "PMWW1\0"
//! record*    name_len u32 | name utf-8 | rank u32 | dims u64 × rank |
//!            dtype u8 (0 = f32, 1 = f64) | values, little endian
//! checksum   u64       first 8 bytes (LE) of SHA-256 over everything above
//! ```
//!
//! All integers are little endian. Records appear in model parameter order;
//! running statistics are stored like any other parameter.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::ModelGraph;
use crate::error::{Error, Result};
use crate::rng::hash64;
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 6] = b"PMWW1\0";

/// A tensor read from disk in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn to<T: Scalar>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

/// Names reported by [`load_weights`]. Together the three lists cover every
/// name in the file and in the model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    /// In both file and model; copied.
    pub loaded: Vec<String>,
    /// In the file only.
    pub skipped: Vec<String>,
    /// In the model only; left untouched.
    pub missing: Vec<String>,
}

pub fn encode<T: Scalar>(entries: &[(&str, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(T::DTYPE.tag());
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let sum = hash64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn values<T: Scalar>(raw: &[u8]) -> Vec<T> {
    raw.chunks_exact(T::DTYPE.size()).map(T::read_le).collect()
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, StoredTensor)>> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad magic bytes; not a PMWW1 weight file".into()));
    }
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
    if hash64(&bytes[..body_end]) != stored {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let mut r = Reader {
        buf: &bytes[..body_end],
        pos: MAGIC.len(),
    };
    let mut out = Vec::new();
    while r.pos < body_end {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format(format!("record name at byte {} is not UTF-8", r.pos)))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u64("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let tag = r.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("`{name}`: unknown dtype tag {tag}")))?;
        let count: usize = dims.iter().product();
        let raw = r.take(count * dtype.size(), "values")?;
        let t = match dtype {
            DType::F32 => StoredTensor::F32(Tensor::new(dims, values(raw))?),
            DType::F64 => StoredTensor::F64(Tensor::new(dims, values(raw))?),
        };
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_weights<T: Scalar>(model: &ModelGraph<T>, path: &Path) -> Result<()> {
    let entries: Vec<(&str, &Tensor<T>)> = model.params().iter().map(|p| (p.name.as_str(), &p.value)).collect();
    fs::write(path, encode(&entries)).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<Vec<(String, StoredTensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Copies matching parameters into `model`. Without `allow_partial` any
/// skipped or missing name is an error; a shape mismatch always is.
pub fn load_entries<T: Scalar>(
    entries: &[(String, StoredTensor)],
    model: &mut ModelGraph<T>,
    allow_partial: bool,
) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut seen = BTreeSet::new();
    for (name, stored) in entries {
        match model.param_id(name) {
            Some(id) => {
                let param = &model.params()[id];
                if param.value.shape() != stored.shape() {
                    return Err(Error::ParamShape {
                        name: name.clone(),
                        expected: param.value.shape().to_vec(),
                        found: stored.shape().to_vec(),
                    });
                }
                seen.insert(id);
                report.loaded.push(name.clone());
            }
            None => report.skipped.push(name.clone()),
        }
    }
    report.missing = model
        .params()
        .iter()
        .enumerate()
        .filter(|(i, _)| !seen.contains(i))
        .map(|(_, p)| p.name.clone())
        .collect();
    if !allow_partial && (!report.skipped.is_empty() || !report.missing.is_empty()) {
        return Err(Error::Format(format!(
            "weight file does not match the model ({} skipped, {} missing); use a partial load",
            report.skipped.len(),
            report.missing.len()
        )));
    }
    for (name, stored) in entries {
        if let Some(id) = model.param_id(name) {
            model.params_mut()[id].value = stored.to();
        }
    }
    Ok(report)
}

pub fn load_weights<T: Scalar>(path: &Path, model: &mut ModelGraph<T>, allow_partial: bool) -> Result<LoadReport> {
    load_entries(&read_weights(path)?, model, allow_partial)
}

/// Checksum of the selected parameters' names and raw values.
pub fn params_checksum<T: Scalar>(model: &ModelGraph<T>, select: impl Fn(&str) -> bool) -> u64 {
    let entries: Vec<(&str, &Tensor<T>)> = model
        .params()
        .iter()
        .filter(|p| select(&p.name))
        .map(|p| (p.name.as_str(), &p.value))
        .collect();
    hash64(&encode(&entries))
}
