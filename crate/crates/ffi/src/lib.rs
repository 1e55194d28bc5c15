//! C ABI over `pmw-core`.
//!
//! Every function returns a [`PmwStatus`]. On failure the message is
//! available from [`pmw_last_error`] on the same thread until the next call.
//! Models are opaque [`PmwModel`] handles released with [`pmw_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pmw_core::cli::RunConfig;
use pmw_core::data::image::{resize_bilinear, rgb_to_tensor};
use pmw_core::data::Rgb8;
use pmw_core::eval::{metrics, ConfusionMatrix};
use pmw_core::models::{load_weights, Arch, ModelGraph, SmallConfig};
use pmw_core::{Error, Tensor};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Numerical = 6,
    Internal = 7,
}

impl From<&Error> for PmwStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => PmwStatus::Io,
            Error::Format(_) | Error::Json(_) | Error::Image { .. } | Error::Csv { .. } => PmwStatus::Format,
            Error::Shape { .. } | Error::ParamShape { .. } => PmwStatus::Shape,
            Error::Numerical(_) => PmwStatus::Numerical,
            Error::Config(_) | Error::Data(_) | Error::Graph(_) => PmwStatus::InvalidArgument,
        }
    }
}

/// A trained classifier.
pub struct PmwModel {
    graph: ModelGraph<f32>,
    input: [usize; 3],
}

/// Per-class and macro-averaged metrics. Bit `i` of `undefined_mask` is set
/// when field `i` (in declaration order, accuracy = 0) had a zero
/// denominator and was reported as 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PmwMetrics {
    pub accuracy: f64,
    pub pmw_precision: f64,
    pub pmw_recall: f64,
    pub pmw_f1: f64,
    pub not_pmw_precision: f64,
    pub not_pmw_recall: f64,
    pub not_pmw_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub undefined_mask: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: PmwStatus, msg: impl Into<String>) -> PmwStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, recording its error and turning panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), PmwStatus>) -> PmwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PmwStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(PmwStatus::Internal, "internal panic"),
    }
}

fn core_err(e: Error) -> PmwStatus {
    let status = PmwStatus::from(&e);
    fail(status, e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PmwStatus> {
    if p.is_null() {
        return Err(fail(PmwStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PmwStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn null(what: &str) -> PmwStatus {
    fail(PmwStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn pmw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pmw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn finish_load(cfg: &RunConfig, weights: &Path, out: *mut *mut PmwModel) -> Result<(), PmwStatus> {
    let mut graph = cfg.arch.build(cfg.input_shape(), &cfg.model, 0).map_err(core_err)?;
    load_weights(weights, &mut graph, false).map_err(core_err)?;
    let model = Box::new(PmwModel {
        graph,
        input: cfg.input_shape(),
    });
    unsafe { *out = Box::into_raw(model) };
    Ok(())
}

/// Loads `weights.bin` using the architecture in `config.json` from a run
/// directory written by `pmw train`.
///
/// # Safety
/// `run_dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pmw_model_load_run(run_dir: *const c_char, out: *mut *mut PmwModel) -> PmwStatus {
    guard(|| {
        let dir = Path::new(str_arg(run_dir, "run_dir")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let path = dir.join("config.json");
        let text = std::fs::read_to_string(&path).map_err(|e| core_err(Error::Io { path: path.clone(), source: e }))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| core_err(e.into()))?;
        finish_load(&cfg, &dir.join("weights.bin"), out)
    })
}

/// Loads a weight file for architecture `arch` (e.g. `"resnet_s"`) with
/// default head settings, backbone width `width` and `image_height` ×
/// `image_width` inputs.
///
/// # Safety
/// `weights_path` and `arch` must be NUL-terminated strings and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pmw_model_load(
    weights_path: *const c_char,
    arch: *const c_char,
    width: usize,
    image_height: usize,
    image_width: usize,
    out: *mut *mut PmwModel,
) -> PmwStatus {
    guard(|| {
        let path = str_arg(weights_path, "weights_path")?;
        let arch: Arch = str_arg(arch, "arch")?.parse().map_err(core_err)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if width == 0 || image_height == 0 || image_width == 0 {
            return Err(fail(PmwStatus::InvalidArgument, "width and image size must be positive"));
        }
        let cfg = RunConfig {
            arch,
            model: SmallConfig {
                width,
                ..SmallConfig::default()
            },
            image_size: [image_height, image_width],
            ..RunConfig::default()
        };
        finish_load(&cfg, Path::new(path), out)
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a load function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pmw_model_free(model: *mut PmwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Expected input as channels, height, width.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pmw_model_input_shape(
    model: *const PmwModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> PmwStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if channels.is_null() || height.is_null() || width.is_null() {
            return Err(null("output"));
        }
        [*channels, *height, *width] = m.input;
        Ok(())
    })
}

fn run(model: &PmwModel, batch: Tensor<f32>, out: &mut [f32]) -> Result<(), PmwStatus> {
    let y = model.graph.forward(&batch).map_err(core_err)?;
    if !y.all_finite() {
        return Err(fail(PmwStatus::Numerical, "network produced a non-finite probability"));
    }
    out.copy_from_slice(y.data());
    Ok(())
}

/// Scores `n` planar images (`n × 3 × H × W` floats in `[0,1]`, matching
/// [`pmw_model_input_shape`]) and writes `n` PMW probabilities.
///
/// # Safety
/// `pixels` must hold `n·3·H·W` floats and `probs` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn pmw_model_predict(
    model: *const PmwModel,
    pixels: *const f32,
    n: usize,
    probs: *mut f32,
) -> PmwStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if pixels.is_null() || probs.is_null() {
            return Err(null("buffer"));
        }
        if n == 0 {
            return Ok(());
        }
        let per: usize = m.input.iter().product();
        let data = std::slice::from_raw_parts(pixels, n * per).to_vec();
        let mut shape = vec![n];
        shape.extend(m.input);
        let batch = Tensor::new(shape, data).map_err(core_err)?;
        run(m, batch, std::slice::from_raw_parts_mut(probs, n))
    })
}

/// Scores one interleaved 8-bit RGB image of any size; it is resized to the
/// model input with bilinear interpolation.
///
/// # Safety
/// `rgb` must hold `width·height·3` bytes and `prob` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pmw_model_predict_rgb8(
    model: *const PmwModel,
    rgb: *const u8,
    width: usize,
    height: usize,
    prob: *mut f32,
) -> PmwStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if rgb.is_null() || prob.is_null() {
            return Err(null("buffer"));
        }
        if width == 0 || height == 0 {
            return Err(fail(PmwStatus::InvalidArgument, "image is empty"));
        }
        let img = Rgb8 {
            width,
            height,
            pixels: std::slice::from_raw_parts(rgb, width * height * 3).to_vec(),
        };
        let t = resize_bilinear(&rgb_to_tensor(&img), m.input[1], m.input[2]).map_err(core_err)?;
        let batch = t.reshape(&[1, 3, m.input[1], m.input[2]]).map_err(core_err)?;
        run(m, batch, std::slice::from_raw_parts_mut(prob, 1))
    })
}

/// Metrics from binary confusion counts, PMW as the positive class.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pmw_metrics_from_counts(
    true_pos: u64,
    false_neg: u64,
    false_pos: u64,
    true_neg: u64,
    out: *mut PmwMetrics,
) -> PmwStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = metrics(&ConfusionMatrix::new(true_pos, false_neg, false_pos, true_neg));
        let fields = [
            m.accuracy,
            m.classes[0].precision,
            m.classes[0].recall,
            m.classes[0].f1,
            m.classes[1].precision,
            m.classes[1].recall,
            m.classes[1].f1,
            m.macro_avg.precision,
            m.macro_avg.recall,
            m.macro_avg.f1,
        ];
        let mask = fields.iter().enumerate().fold(0u32, |acc, (i, f)| acc | (u32::from(f.undefined) << i));
        *out = PmwMetrics {
            accuracy: fields[0].value,
            pmw_precision: fields[1].value,
            pmw_recall: fields[2].value,
            pmw_f1: fields[3].value,
            not_pmw_precision: fields[4].value,
            not_pmw_recall: fields[5].value,
            not_pmw_f1: fields[6].value,
            macro_precision: fields[7].value,
            macro_recall: fields[8].value,
            macro_f1: fields[9].value,
            undefined_mask: mask,
        };
        Ok(())
    })
}
