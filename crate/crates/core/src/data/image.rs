//! Image decoding and resizing.
//!
//! Natively decoded: binary PPM (`P6`) and raw tensor dumps. PNG and JPEG
//! go through the `image` crate.
//!
//! Raw tensor dump layout: magic `PMWT1\0`, then `channels`, `height`,
//! `width` as little-endian u32, then `channels·height·width` little-endian
//! f32 values in `[0, 1]`, CHW order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RAW_MAGIC: &[u8; 6] = b"PMWT1\0";
pub const DEFAULT_SIZE: (usize, usize) = (224, 224);

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses a binary PPM. Samples with `maxval < 255` are rescaled to 8 bits.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Rgb8, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PPM header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err("not a binary PPM (P6)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        token()?.parse::<usize>().map_err(|_| format!("bad PPM {what}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err("PPM has zero size".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PPM maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let len = width * height * 3;
    let raster = bytes
        .get(start..start + len)
        .ok_or_else(|| "PPM raster is truncated".to_string())?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8)
            .collect()
    };
    Ok(Rgb8 { width, height, pixels })
}

pub fn encode_ppm(img: &Rgb8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_ppm(path: &Path, img: &Rgb8) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_raw(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let [c, h, w]: [usize; 3] = t
        .shape()
        .try_into()
        .map_err(|_| Error::shape("raw tensor", "expected [C,H,W]"))?;
    let mut out = RAW_MAGIC.to_vec();
    for d in [c, h, w] {
        out.write_all(&(d as u32).to_le_bytes()).expect("vec write");
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let header = RAW_MAGIC.len() + 12;
    if bytes.len() < header || &bytes[..RAW_MAGIC.len()] != RAW_MAGIC {
        return Err("not a raw tensor dump".into());
    }
    let dim = |i: usize| {
        let o = RAW_MAGIC.len() + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let (c, h, w) = (dim(0), dim(1), dim(2));
    if c != 3 || h == 0 || w == 0 {
        return Err(format!("raw tensor must be 3×H×W, got {c}×{h}×{w}"));
    }
    let body = &bytes[header..];
    if body.len() != c * h * w * 4 {
        return Err("raw tensor body length does not match its header".into());
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err("raw tensor values must lie in [0, 1]".into());
    }
    Tensor::new(vec![c, h, w], data).map_err(|e| e.to_string())
}

/// Decodes any supported format into a `[3,H,W]` tensor in `[0,1]` at its native size.
pub fn decode_any(path: &Path, bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.starts_with(RAW_MAGIC) {
        return decode_raw(bytes).map_err(|r| image_err(path, r));
    }
    let rgb = if bytes.starts_with(b"P6") {
        decode_ppm(bytes).map_err(|r| image_err(path, r))?
    } else {
        let img = image::load_from_memory(bytes).map_err(|e| image_err(path, e.to_string()))?;
        let rgb = img.to_rgb8();
        Rgb8 {
            width: rgb.width() as usize,
            height: rgb.height() as usize,
            pixels: rgb.into_raw(),
        }
    };
    Ok(rgb_to_tensor(&rgb))
}

/// Planar `[3,H,W]` tensor in `[0,1]`.
pub fn rgb_to_tensor(img: &Rgb8) -> Tensor<f32> {
    let (h, w) = (img.height, img.width);
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        img.pixels[p * 3 + c] as f32 / 255.0
    })
}

/// Bilinear resize of a `[C,H,W]` tensor using half-pixel centers
/// (`src = (dst + 0.5) · in/out − 0.5`, clamped to the edge).
pub fn resize_bilinear(t: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w]: [usize; 3] = t
        .shape()
        .try_into()
        .map_err(|_| Error::shape("resize", "expected [C,H,W]"))?;
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let src = t.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Reads, decodes and resizes one image to `[3, target.0, target.1]` in `[0,1]`.
pub fn load_image(path: &Path, target: (usize, usize)) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| image_err(path, e.to_string()))?;
    let t = decode_any(path, &bytes)?;
    resize_bilinear(&t, target.0, target.1)
}
