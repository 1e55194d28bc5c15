//! Forward and backward kernels for every layer type.
//!
//! Layout is NCHW, row-major. Convolution is cross-correlation with zero
//! padding; output spatial size is `floor((H + 2p - k) / s) + 1`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    /// Kernel `kh×kw`, stride 1, padding that preserves the spatial size for odd kernels.
    pub fn same(out_channels: usize, kh: usize, kw: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel: (kh, kw),
            stride: (1, 1),
            padding: (kh / 2, kw / 2),
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {:?} and stride {:?} must be ≥ 1", self.kernel, self.stride),
            ));
        }
        window_output("conv2d", h, w, self.kernel, self.stride, self.padding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolSpec {
    pub fn new(window: usize, stride: usize) -> Self {
        PoolSpec {
            window: (window, window),
            stride: (stride, stride),
            padding: (0, 0),
        }
    }

    pub fn padded(window: usize, stride: usize, padding: usize) -> Self {
        PoolSpec {
            window: (window, window),
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    pub fn output_dims(&self, op: &'static str, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window.0 == 0 || self.window.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::shape(op, "window and stride must be ≥ 1"));
        }
        if self.padding.0 >= self.window.0 || self.padding.1 >= self.window.1 {
            return Err(Error::shape(
                op,
                format!("padding {:?} must be smaller than window {:?}", self.padding, self.window),
            ));
        }
        window_output(op, h, w, self.window, self.stride, self.padding)
    }
}

fn window_output(
    op: &'static str,
    h: usize,
    w: usize,
    k: (usize, usize),
    s: (usize, usize),
    p: (usize, usize),
) -> Result<(usize, usize)> {
    let (ph, pw) = (h + 2 * p.0, w + 2 * p.1);
    if k.0 > ph {
        return Err(Error::shape(
            op,
            format!("window height {} exceeds padded input height {ph}", k.0),
        ));
    }
    if k.1 > pw {
        return Err(Error::shape(
            op,
            format!("window width {} exceeds padded input width {pw}", k.1),
        ));
    }
    Ok(((ph - k.0) / s.0 + 1, (pw - k.1) / s.1 + 1))
}

// ---------------------------------------------------------------------------
// Convolution

/// Cross-correlation of `input [N,C,H,W]` with `weights [F,C,kh,kw]` plus a
/// per-filter bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_forward(input, weights, bias, spec).map(|(out, _)| out)
}

/// Forward pass that also returns the im2col buffer for [`conv2d_backward`].
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Vec<T>)> {
    let [n, c, h, w] = input.dims4("conv2d")?;
    let [f, wc, kh, kw] = weights.dims4("conv2d weights")?;
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels but weights expect {wc}"),
        ));
    }
    if f != spec.out_channels {
        return Err(Error::shape(
            "conv2d",
            format!("weights have {f} filters but spec declares {}", spec.out_channels),
        ));
    }
    if (kh, kw) != spec.kernel {
        return Err(Error::shape(
            "conv2d",
            format!("weights kernel {kh}×{kw} differs from spec {:?}", spec.kernel),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{f}]", b.shape()),
            ));
        }
    }
    let (oh, ow) = spec.output_dims(h, w)?;
    let p = oh * ow;
    let ckk = c * kh * kw;

    let cols = im2col(input.data(), [n, c, h, w], spec, oh, ow);
    let mut out = vec![T::zero(); n * f * p];
    for s in 0..n {
        T::gemm(
            f,
            ckk,
            p,
            T::one(),
            weights.data(),
            ckk as isize,
            1,
            &cols[s * ckk * p..],
            p as isize,
            1,
            T::zero(),
            &mut out[s * f * p..],
            p as isize,
            1,
        );
    }
    if let Some(b) = bias {
        for plane in out.chunks_mut(p).enumerate() {
            let bv = b.data()[plane.0 % f];
            plane.1.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok((Tensor::new(vec![n, f, oh, ow], out)?, cols))
}

fn im2col<T: Scalar>(
    x: &[T],
    [n, c, h, w]: [usize; 4],
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let p = oh * ow;
    let ckk = c * kh * kw;
    let mut cols = vec![T::zero(); n * ckk * p];
    for s in 0..n {
        for ch in 0..c {
            let plane = &x[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = (ch * kh + i) * kw + j;
                    let dst = &mut cols[(s * ckk + row) * p..(s * ckk + row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * sh + i) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * sw + j) as isize - pw as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    [c, h, w]: [usize; 3],
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    dx: &mut [T],
) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let p = oh * ow;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = (ch * kh + i) * kw + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * sh + i) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..ow {
                        let ix = (ox * sw + j) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a convolution given the forward im2col buffer.
pub fn conv2d_backward<T: Scalar>(
    input_shape: &[usize],
    cols: &[T],
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let [n, c, h, w]: [usize; 4] = input_shape
        .try_into()
        .map_err(|_| Error::shape("conv2d backward", "input must be rank 4"))?;
    let [gn, f, oh, ow] = grad_out.dims4("conv2d backward")?;
    if gn != n || f != spec.out_channels {
        return Err(Error::shape(
            "conv2d backward",
            format!("gradient shape {:?} does not match the forward output", grad_out.shape()),
        ));
    }
    let (kh, kw) = spec.kernel;
    let p = oh * ow;
    let ckk = c * kh * kw;
    let dy = grad_out.data();

    let mut dw = vec![T::zero(); f * ckk];
    let mut db = vec![T::zero(); f];
    let mut dx = need_input.then(|| vec![T::zero(); n * c * h * w]);
    let mut dcols = vec![T::zero(); if need_input { ckk * p } else { 0 }];
    for s in 0..n {
        let dy_s = &dy[s * f * p..(s + 1) * f * p];
        let cols_s = &cols[s * ckk * p..(s + 1) * ckk * p];
        // dW += dY · colsᵀ
        T::gemm(f, p, ckk, T::one(), dy_s, p as isize, 1, cols_s, 1, p as isize, T::one(), &mut dw, ckk as isize, 1);
        for (fi, d) in db.iter_mut().enumerate() {
            *d += dy_s[fi * p..(fi + 1) * p].iter().fold(T::zero(), |a, &v| a + v);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY
            T::gemm(ckk, f, p, T::one(), weights.data(), 1, ckk as isize, dy_s, p as isize, 1, T::zero(), &mut dcols, p as isize, 1);
            col2im(&dcols, [c, h, w], spec, oh, ow, &mut dx[s * c * h * w..(s + 1) * c * h * w]);
        }
    }
    Ok(ConvGrads {
        input: dx.map(|d| Tensor::new(vec![n, c, h, w], d)).transpose()?,
        weights: Tensor::new(weights.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![f], db)?,
    })
}

// ---------------------------------------------------------------------------
// Pooling

/// Max pooling. Returns the output and, per output element, the flat index of
/// the winning input element.
pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: &PoolSpec,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.dims4("maxpool2d")?;
    let (oh, ow) = spec.output_dims("maxpool2d", h, w)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for_window(spec, h, w, oy, ox, |iy, ix| {
                    let idx = base + iy * w + ix;
                    if x[idx] > best || best_idx == usize::MAX {
                        best = x[idx];
                        best_idx = idx;
                    }
                });
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<Tensor<T>> {
    maxpool2d_forward(input, spec).map(|(o, _)| o)
}

pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    dx
}

fn for_window(
    spec: &PoolSpec,
    h: usize,
    w: usize,
    oy: usize,
    ox: usize,
    mut f: impl FnMut(usize, usize),
) {
    let y0 = (oy * spec.stride.0) as isize - spec.padding.0 as isize;
    let x0 = (ox * spec.stride.1) as isize - spec.padding.1 as isize;
    for iy in y0.max(0)..(y0 + spec.window.0 as isize).min(h as isize) {
        for ix in x0.max(0)..(x0 + spec.window.1 as isize).min(w as isize) {
            f(iy as usize, ix as usize);
        }
    }
}

/// Average pooling; padded positions are excluded from the mean.
pub fn avgpool2d<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("avgpool2d")?;
    let (oh, ow) = spec.output_dims("avgpool2d", h, w)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                let mut count = 0;
                for_window(spec, h, w, oy, ox, |iy, ix| {
                    acc += x[base + iy * w + ix];
                    count += 1;
                });
                out.push(acc / T::from_usize(count));
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avgpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    spec: &PoolSpec,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [_, _, oh, ow] = grad_out.dims4("avgpool2d backward")?;
    let (h, w) = (input_shape[2], input_shape[3]);
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    let g = grad_out.data();
    for plane in 0..input_shape[0] * input_shape[1] {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut count = 0;
                for_window(spec, h, w, oy, ox, |_, _| count += 1);
                let share = g[(plane * oh + oy) * ow + ox] / T::from_usize(count);
                for_window(spec, h, w, oy, ox, |iy, ix| d[base + iy * w + ix] += share);
            }
        }
    }
    Ok(dx)
}

/// Mean of each channel plane: `[N,C,H,W] -> [N,C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avg_pool")?;
    let area = T::from_usize(h * w);
    let out = input
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v) / area)
        .collect();
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let area: usize = input_shape[2..].iter().product();
    let scale = T::one() / T::from_usize(area);
    let mut dx = Tensor::zeros(input_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(area).zip(grad_out.data()) {
        plane.iter_mut().for_each(|v| *v = g * scale);
    }
    dx
}

// ---------------------------------------------------------------------------
// Dense

/// Affine map `input [N,D] · weights [D,K] + bias [K]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, d] = input.dims2("dense")?;
    let [wd, k] = weights.dims2("dense weights")?;
    if wd != d {
        return Err(Error::shape(
            "dense",
            format!("input features {d} do not match weight rows {wd}"),
        ));
    }
    if bias.shape() != [k] {
        return Err(Error::shape(
            "dense",
            format!("bias shape {:?}, expected [{k}]", bias.shape()),
        ));
    }
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(n, d, k, T::one(), input.data(), d as isize, 1, weights.data(), k as isize, 1, T::one(), &mut out, k as isize, 1);
    Tensor::new(vec![n, k], out)
}

pub struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<DenseGrads<T>> {
    let [n, d] = input.dims2("dense backward")?;
    let [_, k] = weights.dims2("dense backward")?;
    if grad_out.shape() != [n, k] {
        return Err(Error::shape(
            "dense backward",
            format!("gradient shape {:?}, expected [{n}, {k}]", grad_out.shape()),
        ));
    }
    let g = grad_out.data();
    let mut dw = vec![T::zero(); d * k];
    T::gemm(d, n, k, T::one(), input.data(), 1, d as isize, g, k as isize, 1, T::zero(), &mut dw, k as isize, 1);
    let mut db = vec![T::zero(); k];
    for row in g.chunks(k) {
        for (b, &v) in db.iter_mut().zip(row) {
            *b += v;
        }
    }
    let dx = if need_input {
        let mut dx = vec![T::zero(); n * d];
        T::gemm(n, k, d, T::one(), g, k as isize, 1, weights.data(), 1, k as isize, T::zero(), &mut dx, d as isize, 1);
        Some(Tensor::new(vec![n, d], dx)?)
    } else {
        None
    };
    Ok(DenseGrads {
        input: dx,
        weights: Tensor::new(vec![d, k], dw)?,
        bias: Tensor::new(vec![k], db)?,
    })
}

// ---------------------------------------------------------------------------
// Activations

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu given its forward output.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = grad_out.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient of sigmoid given its forward output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = grad_out.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        *d *= y * (T::one() - y);
    }
    dx
}

// ---------------------------------------------------------------------------
// Batch normalization

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Saved quantities for the batchnorm backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

/// Per-channel statistics for a `[N,C,...]` tensor: (channels, spatial size).
fn bn_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(Error::shape("batchnorm", format!("rank {} input", x.rank())));
    }
    let s = x.shape();
    Ok((s[0], s[1], s[2..].iter().product()))
}

/// Batch normalization over every axis but the channel axis.
///
/// In `Train` mode the batch statistics are used and the running statistics
/// are blended as `running = (1 - momentum) * running + momentum * batch`.
/// `Infer` mode uses the running statistics and leaves them alone.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    momentum: T,
    eps: T,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, sp) = bn_dims(x)?;
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running mean", &*running_mean), ("running var", &*running_var)] {
        if t.shape() != [c] {
            return Err(Error::shape(
                "batchnorm",
                format!("{name} has shape {:?}, input has {c} channels", t.shape()),
            ));
        }
    }
    let data = x.data();
    let m = n * sp;
    let (mean, var): (Vec<T>, Vec<T>) = match mode {
        Mode::Train => (0..c)
            .map(|ch| {
                let mut sum = T::zero();
                for s in 0..n {
                    sum += data[(s * c + ch) * sp..(s * c + ch + 1) * sp].iter().fold(T::zero(), |a, &v| a + v);
                }
                let mean = sum / T::from_usize(m);
                let mut sq = T::zero();
                for s in 0..n {
                    for &v in &data[(s * c + ch) * sp..(s * c + ch + 1) * sp] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                (mean, sq / T::from_usize(m))
            })
            .unzip(),
        Mode::Infer => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); data.len()];
    let mut out = vec![T::zero(); data.len()];
    for s in 0..n {
        for ch in 0..c {
            let range = (s * c + ch) * sp..(s * c + ch + 1) * sp;
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for i in range {
                let h = (data[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = g * h + b;
            }
        }
    }
    if mode == Mode::Train {
        let keep = T::one() - momentum;
        for ch in 0..c {
            running_mean.data_mut()[ch] = keep * running_mean.data()[ch] + momentum * mean[ch];
            running_var.data_mut()[ch] = keep * running_var.data()[ch] + momentum * var[ch];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        BatchNormCache { xhat, inv_std, mode },
    ))
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let (n, c, sp) = bn_dims(grad_out)?;
    let g = grad_out.data();
    let m = T::from_usize(n * sp);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            for i in (s * c + ch) * sp..(s * c + ch + 1) * sp {
                dgamma[ch] += g[i] * cache.xhat[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    for s in 0..n {
        for ch in 0..c {
            let gm = gamma.data()[ch];
            let k = cache.inv_std[ch];
            for i in (s * c + ch) * sp..(s * c + ch + 1) * sp {
                dx[i] = match cache.mode {
                    // dxhat = g·γ; dx = k/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    Mode::Train => {
                        gm * k / m * (m * g[i] - dbeta[ch] - cache.xhat[i] * dgamma[ch])
                    }
                    Mode::Infer => gm * k * g[i],
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape().to_vec(), dx)?,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout. In `Train` mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; the returned mask
/// holds the per-element factor. `Infer` mode and `rate == 0` are identity.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), out)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&[T]>, grad_out: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => grad_out.clone(),
        Some(mask) => {
            let mut dx = grad_out.clone();
            for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                *d *= m;
            }
            dx
        }
    }
}

// ---------------------------------------------------------------------------
// Binary cross-entropy

fn check_bce<T: Scalar>(probs: &Tensor<T>, labels: &[T]) -> Result<()> {
    let n = probs.shape().first().copied().unwrap_or(0);
    if probs.len() != n || labels.len() != n {
        return Err(Error::shape(
            "bce_loss",
            format!("probabilities {:?} vs {} labels", probs.shape(), labels.len()),
        ));
    }
    if n == 0 {
        return Err(Error::shape("bce_loss", "empty batch"));
    }
    Ok(())
}

/// Mean binary cross-entropy of probabilities `[N]` or `[N,1]` against 0/1 labels.
pub fn bce_loss<T: Scalar>(probs: &Tensor<T>, labels: &[T]) -> Result<T> {
    check_bce(probs, labels)?;
    let (lo, hi) = (T::from_f64(BCE_EPS), T::from_f64(1.0 - BCE_EPS));
    let total = probs
        .data()
        .iter()
        .zip(labels)
        .fold(T::zero(), |acc, (&p, &y)| {
            // NaN is not clamped.
            let p = if p.is_nan() { p } else { p.max(lo).min(hi) };
            acc - (y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        });
    Ok(total / T::from_usize(labels.len()))
}

/// d(bce)/d(prob). Zero where the clamp is active.
pub fn bce_backward<T: Scalar>(probs: &Tensor<T>, labels: &[T]) -> Result<Tensor<T>> {
    check_bce(probs, labels)?;
    let (lo, hi) = (T::from_f64(BCE_EPS), T::from_f64(1.0 - BCE_EPS));
    let n = T::from_usize(labels.len());
    let mut g = probs.clone();
    for (d, &y) in g.data_mut().iter_mut().zip(labels) {
        let p = *d;
        *d = if p < lo || p > hi {
            T::zero()
        } else {
            (p - y) / (p * (T::one() - p)) / n
        };
    }
    Ok(g)
}

/// d(bce ∘ sigmoid)/d(logit) = (p - y) / N, evaluated from the probabilities.
pub fn bce_logit_backward<T: Scalar>(probs: &Tensor<T>, labels: &[T]) -> Result<Tensor<T>> {
    check_bce(probs, labels)?;
    let n = T::from_usize(labels.len());
    let mut g = probs.clone();
    for (d, &y) in g.data_mut().iter_mut().zip(labels) {
        *d = (*d - y) / n;
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Structural ops

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
        .map_err(|_| Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())))
}

/// Concatenate NCHW tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?
        .dims4("concat")?;
    let [n, _, h, w] = first;
    let mut total_c = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.dims4("concat")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(
                "concat",
                format!("branch shape {:?} incompatible with {:?}", p.shape(), first),
            ));
        }
        total_c += pc;
    }
    let mut out = Vec::with_capacity(n * total_c * h * w);
    for s in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[s * pc * h * w..(s + 1) * pc * h * w]);
        }
    }
    Tensor::new(vec![n, total_c, h, w], out)
}

/// Split a channel-concatenated gradient back into per-branch pieces.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [n, c, h, w] = grad.dims4("concat backward")?;
    if channels.iter().sum::<usize>() != c {
        return Err(Error::shape("concat backward", "channel split does not cover input"));
    }
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&pc| Vec::with_capacity(n * pc * h * w)).collect();
    for s in 0..n {
        let mut off = (s * c) * h * w;
        for (part, &pc) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[off..off + pc * h * w]);
            off += pc * h * w;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &pc)| Tensor::new(vec![n, pc, h, w], d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = stream(1, Purpose::Oracle, 0);
        let x = Tensor::<f64>::uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let b = Tensor::zeros(&[3]);
        let y = conv2d(&x, &w, Some(&b), &ConvSpec::new(3, 1, 1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn constant_field_sums_to_nine() {
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, &ConvSpec::new(1, 3, 1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_reports_offending_dimension() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let err = conv2d(&x, &w, None, &ConvSpec::new(4, 3, 1, 0)).unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");
        let w = Tensor::zeros(&[4, 2, 7, 7]);
        let err = conv2d(&x, &w, None, &ConvSpec::new(4, 7, 1, 0)).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn pooling_basics() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&x, &PoolSpec::new(2, 2)).unwrap().data(), &[4.0]);
        assert_eq!(avgpool2d(&x, &PoolSpec::new(2, 2)).unwrap().data(), &[2.5]);
        let c = Tensor::<f32>::full(&[2, 3, 5, 4], 0.75);
        let g = global_avg_pool(&c).unwrap();
        assert_eq!(g.shape(), &[2, 3]);
        assert!(g.data().iter().all(|&v| v == 0.75));
        assert!(maxpool2d(&x, &PoolSpec::new(3, 1)).is_err());
    }

    #[test]
    fn padded_avgpool_excludes_padding() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 2.0);
        let y = avgpool2d(&x, &PoolSpec::padded(3, 1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn dense_hand_arithmetic() {
        let x = Tensor::<f64>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.5]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[3.5]);

        let eye = Tensor::<f64>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        assert!(dense(&x, &Tensor::zeros(&[4, 3]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn activations() {
        let x = Tensor::<f64>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!((sigmoid_scalar(36.0f64) - 1.0).abs() < 1e-15);
        assert!(sigmoid_scalar(-36.0f64) < 1e-15 && sigmoid_scalar(-36.0f64) > 0.0);
        assert!(sigmoid_scalar(-1000.0f64).is_finite());
        assert!(sigmoid_scalar(1000.0f32).is_finite());
    }

    #[test]
    fn bce_values() {
        let p = Tensor::<f64>::new(vec![1, 1], vec![0.5]).unwrap();
        assert!((bce_loss(&p, &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let p = Tensor::<f64>::new(vec![1], vec![1.0 - 1e-12]).unwrap();
        assert!(bce_loss(&p, &[1.0]).unwrap() < 1e-6);
        let p = Tensor::<f64>::new(vec![2], vec![0.0, 1.0]).unwrap();
        let l = bce_loss(&p, &[1.0, 0.0]).unwrap();
        assert!(l.is_finite() && l > 0.0);
        let g = bce_logit_backward(&Tensor::<f64>::scalar(0.5), &[1.0]).unwrap();
        assert_eq!(g.data(), &[-0.5]);
        assert!(bce_loss(&Tensor::<f64>::zeros(&[2]), &[1.0]).is_err());
    }

    #[test]
    fn batchnorm_infer_identity_and_zero_variance_guard() {
        let mut rng = stream(2, Purpose::Oracle, 0);
        let x = Tensor::<f64>::uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut rng);
        let (g, b) = (Tensor::full(&[3], 1.0), Tensor::zeros(&[3]));
        let (mut rm, mut rv) = (Tensor::zeros(&[3]), Tensor::full(&[3], 1.0));
        let (y, _) = batchnorm_forward(&x, &g, &b, &mut rm, &mut rv, 0.1, 1e-5, Mode::Infer).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-5);
        }
        let one = Tensor::<f64>::full(&[1, 3, 1, 1], 4.0);
        let (y, _) = batchnorm_forward(&one, &g, &b, &mut rm, &mut rv, 0.1, 1e-5, Mode::Train).unwrap();
        assert!(y.all_finite());
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_modes() {
        let x = Tensor::<f32>::full(&[10], 2.0);
        let mut rng = stream(3, Purpose::Dropout, 0);
        assert_eq!(dropout(&x, 0.3, &mut rng, Mode::Infer).unwrap().0, x);
        assert_eq!(dropout(&x, 0.0, &mut rng, Mode::Train).unwrap().0, x);
        assert!(dropout(&x, 1.0, &mut rng, Mode::Train).is_err());
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = stream(4, Purpose::Oracle, 0);
        let a = Tensor::<f64>::uniform(&[2, 1, 2, 2], 0.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[2, 3, 2, 2], 0.0, 1.0, &mut rng);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        let parts = split_channels(&c, &[1, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
