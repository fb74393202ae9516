//! C ABI over the readywatch toolkit.
//!
//! Every function returns an [`RwStatus`] and writes results through out
//! pointers. On failure, [`rw_last_error_message`] describes the most recent
//! error on the calling thread. Handles are opaque and must be released with
//! their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use readywatch::domain::{EgoSample, Episode};
use readywatch::io::load_episodes;
use readywatch::metrics::{delta_v, delta_x, pearson};
use readywatch::net::{evaluate_mae, Checkpoint, ReadinessModel};
use readywatch::synth::{sample_dataset, GeneratorConfig};
use readywatch::Error;

/// Result codes; nonzero values match the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Validation = 4,
    /// The quantity is mathematically undefined, e.g. correlation of a constant series.
    Undefined = 5,
    Panic = 6,
}

/// Trained regressor loaded from a checkpoint.
pub struct RwModel {
    inner: ReadinessModel,
}

/// In-memory list of episodes.
pub struct RwDataset {
    episodes: Vec<Episode>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: RwStatus, message: impl Into<String>) -> RwStatus {
    set_error(message.into());
    status
}

fn from_error(e: Error) -> RwStatus {
    let status = match &e {
        Error::ZeroVariance(_) => RwStatus::Undefined,
        e if e.is_io() => RwStatus::Io,
        _ => RwStatus::Validation,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> RwStatus) -> RwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(RwStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, RwStatus> {
    if path.is_null() {
        return Err(fail(RwStatus::NullArgument, "path is null"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(RwStatus::InvalidArgument, "path is not valid UTF-8")),
    }
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], RwStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RwStatus::NullArgument, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `readywatch train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_model_load(path: *const c_char, out: *mut *mut RwModel) -> RwStatus {
    guard(|| {
        if out.is_null() {
            return fail(RwStatus::NullArgument, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(&path) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(RwModel { inner: c.model }));
                RwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must come from [`rw_model_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rw_model_free(model: *mut RwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of feature columns per frame the model expects; 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rw_model_input_dim(model: *const RwModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.net.input_dim())
}

/// Frames per input window; 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rw_model_window_frames(model: *const RwModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.window_frames)
}

/// Prediction for one row-major window of `len = frames * input_dim` values,
/// already restricted to the model's feature columns. ORI outputs are clamped
/// to [1, 5]; takeover times are floored at 0.
///
/// # Safety
/// `window` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_model_predict_window(
    model: *const RwModel,
    window: *const f64,
    len: usize,
    out: *mut f64,
) -> RwStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(RwStatus::NullArgument, "model is null");
        };
        if out.is_null() {
            return fail(RwStatus::NullArgument, "out is null");
        }
        let w = match slice_arg(window, len, "window") {
            Ok(w) => w,
            Err(s) => return s,
        };
        match m.inner.net.forward_window(w) {
            Ok(v) => {
                *out = m.inner.finish(v);
                RwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Loads a JSON-Lines episode file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_dataset_load(path: *const c_char, out: *mut *mut RwDataset) -> RwStatus {
    guard(|| {
        if out.is_null() {
            return fail(RwStatus::NullArgument, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_episodes(&path) {
            Ok(episodes) => {
                *out = Box::into_raw(Box::new(RwDataset { episodes }));
                RwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Synthetic dataset with the default generator settings.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_dataset_synth(
    subjects: usize,
    per_task: usize,
    seed: u64,
    out: *mut *mut RwDataset,
) -> RwStatus {
    guard(|| {
        if out.is_null() {
            return fail(RwStatus::NullArgument, "out is null");
        }
        match sample_dataset(&GeneratorConfig::default(), subjects, per_task, seed) {
            Ok(episodes) => {
                *out = Box::into_raw(Box::new(RwDataset { episodes }));
                RwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Episode count; 0 for null.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rw_dataset_len(dataset: *const RwDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.episodes.len())
}

/// Speed and lateral deviation after the takeover request of episode `index`.
///
/// # Safety
/// `dataset` must be a live handle; `delta_v_out` and `delta_x_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_dataset_quality(
    dataset: *const RwDataset,
    index: usize,
    horizon: f64,
    delta_v_out: *mut f64,
    delta_x_out: *mut f64,
) -> RwStatus {
    guard(|| {
        let Some(d) = dataset.as_ref() else {
            return fail(RwStatus::NullArgument, "dataset is null");
        };
        if delta_v_out.is_null() || delta_x_out.is_null() {
            return fail(RwStatus::NullArgument, "output pointer is null");
        }
        let Some(ep) = d.episodes.get(index) else {
            return fail(
                RwStatus::InvalidArgument,
                format!("index {index} out of range for {} episodes", d.episodes.len()),
            );
        };
        match readywatch::metrics::quality_metrics(ep, horizon) {
            Ok(q) => {
                *delta_v_out = q.delta_v;
                *delta_x_out = q.delta_x;
                RwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `dataset` must come from a `rw_dataset_*` constructor and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rw_dataset_free(dataset: *mut RwDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

unsafe fn trajectory(times: *const f64, values: *const f64, n: usize, lateral: bool) -> Result<Vec<EgoSample>, RwStatus> {
    let t = slice_arg(times, n, "times")?;
    let v = slice_arg(values, n, "values")?;
    Ok(t.iter()
        .zip(v)
        .map(|(&t, &v)| EgoSample {
            t,
            speed: if lateral { 0.0 } else { v },
            lateral_offset: if lateral { v } else { 0.0 },
        })
        .collect())
}

/// Largest |speed - speed at request| over `(t_tor, t_tor + horizon]`.
///
/// # Safety
/// `times` and `speeds` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_delta_v(
    times: *const f64,
    speeds: *const f64,
    n: usize,
    t_tor: f64,
    horizon: f64,
    out: *mut f64,
) -> RwStatus {
    guard(|| {
        if out.is_null() {
            return fail(RwStatus::NullArgument, "out is null");
        }
        let ego = match trajectory(times, speeds, n, false) {
            Ok(e) => e,
            Err(s) => return s,
        };
        match delta_v(&ego, t_tor, horizon) {
            Ok(v) => {
                *out = v;
                RwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Largest |lateral offset| over `(t_tor, t_tor + horizon]`.
///
/// # Safety
/// `times` and `offsets` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_delta_x(
    times: *const f64,
    offsets: *const f64,
    n: usize,
    t_tor: f64,
    horizon: f64,
    out: *mut f64,
) -> RwStatus {
    guard(|| {
        if out.is_null() {
            return fail(RwStatus::NullArgument, "out is null");
        }
        let ego = match trajectory(times, offsets, n, true) {
            Ok(e) => e,
            Err(s) => return s,
        };
        match delta_x(&ego, t_tor, horizon) {
            Ok(v) => {
                *out = v;
                RwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Sample Pearson correlation. Returns `Undefined` and leaves `out`
/// untouched when either series is constant.
///
/// # Safety
/// `xs` and `ys` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_pearson(xs: *const f64, ys: *const f64, n: usize, out: *mut f64) -> RwStatus {
    guard(|| {
        if out.is_null() {
            return fail(RwStatus::NullArgument, "out is null");
        }
        let (x, y) = match (slice_arg(xs, n, "xs"), slice_arg(ys, n, "ys")) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match pearson(x, y) {
            Ok(r) => {
                *out = r;
                RwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Mean absolute error.
///
/// # Safety
/// `preds` and `truths` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_mae(preds: *const f64, truths: *const f64, n: usize, out: *mut f64) -> RwStatus {
    guard(|| {
        if out.is_null() {
            return fail(RwStatus::NullArgument, "out is null");
        }
        let (p, t) = match (slice_arg(preds, n, "preds"), slice_arg(truths, n, "truths")) {
            (Ok(p), Ok(t)) => (p, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match evaluate_mae(p, t) {
            Ok(v) => {
                *out = v;
                RwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
