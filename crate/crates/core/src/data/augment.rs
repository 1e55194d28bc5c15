//! Label-preserving random rotation, zoom and horizontal mirroring.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    /// Multiplicative zoom range; values above 1 magnify.
    pub zoom_range: (f64, f64),
    pub hflip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: 20.0,
            zoom_range: (0.8, 1.2),
            hflip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            zoom_range: (1.0, 1.0),
            hflip_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("zoom_range ({lo}, {hi}) must be positive and ordered")));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("hflip_prob {} outside [0, 1]", self.hflip_prob)));
        }
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return Err(Error::Config(format!("rotation_deg {} must be ≥ 0", self.rotation_deg)));
        }
        Ok(())
    }
}

/// The concrete transform drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    pub zoom: f64,
    pub flip: bool,
}

impl Transform {
    pub fn draw(cfg: &AugmentConfig, seed: u64, index: u64) -> Self {
        let mut rng = rng::stream(seed, Purpose::Augment, index);
        let angle_deg = if cfg.rotation_deg > 0.0 {
            rng.gen_range(-cfg.rotation_deg..=cfg.rotation_deg)
        } else {
            0.0
        };
        let (lo, hi) = cfg.zoom_range;
        let zoom = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let flip = rng.gen::<f64>() < cfg.hflip_prob;
        Transform { angle_deg, zoom, flip }
    }
}

/// Mirror a `[C,H,W]` image left to right.
pub fn hflip(img: &Tensor<f32>) -> Tensor<f32> {
    let s = img.shape();
    let w = s[s.len() - 1];
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Rotate about the center and zoom, sampling bilinearly; pixels that fall
/// outside the source frame replicate the nearest edge.
pub fn rotate_zoom(img: &Tensor<f32>, angle_deg: f64, zoom: f64) -> Result<Tensor<f32>> {
    let [c, h, w]: [usize; 3] = img
        .shape()
        .try_into()
        .map_err(|_| Error::shape("augment", "expected [C,H,W]"))?;
    if angle_deg == 0.0 && zoom == 1.0 {
        return Ok(img.clone());
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let src = img.data();
    let mut out = vec![0.0f32; img.len()];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = ((y as f64 - cy) / zoom, (x as f64 - cx) / zoom);
            // inverse rotation maps output coordinates back into the source
            let sx = (cos * dx + sin * dy + cx).clamp(0.0, (w - 1) as f64);
            let sy = (-sin * dx + cos * dy + cy).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for ch in 0..c {
                let p = &src[ch * h * w..(ch + 1) * h * w];
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[ch * h * w + y * w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Applies the transform drawn for `(seed, index)`.
pub fn augment(img: &Tensor<f32>, cfg: &AugmentConfig, seed: u64, index: u64) -> Result<Tensor<f32>> {
    cfg.validate()?;
    let t = Transform::draw(cfg, seed, index);
    let out = rotate_zoom(img, t.angle_deg, t.zoom)?;
    Ok(if t.flip { hflip(&out) } else { out })
}
