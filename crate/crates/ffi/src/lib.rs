//! C ABI over the `tatk` library.
//!
//! Every fallible call returns a [`TatkStatus`]. On failure the message is
//! kept per thread and read back with [`tatk_last_error`]. Arrays are
//! row-major `f64` buffers with explicit lengths; output buffers are
//! caller-owned. Models live behind the opaque [`TatkModel`] handle.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tatk::attribution::{self, Context, Method, Target};
use tatk::autodiff::Tensor;
use tatk::datasets::{hawkes_intensity, Event, HawkesParams};
use tatk::models::{load_model, Model};
use tatk::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TatkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    Undefined = 7,
    Diverged = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque model handle.
pub struct TatkModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TatkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => TatkStatus::ShapeMismatch,
            Error::NonFinite { .. } => TatkStatus::NonFinite,
            Error::Io { .. } => TatkStatus::Io,
            Error::Format { .. } | Error::Json(_) => TatkStatus::Format,
            Error::Undefined(_) => TatkStatus::Undefined,
            Error::Diverged { .. } | Error::MaskDiverged { .. } => TatkStatus::Diverged,
            _ => TatkStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TatkStatus::InvalidArgument, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TatkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TatkStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TatkStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(TatkStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn model_ref<'a>(m: *const TatkModel) -> Result<&'a Model, Failure> {
    m.as_ref()
        .map(|h| &h.model)
        .ok_or_else(|| Failure(TatkStatus::NullPointer, "model handle is null".into()))
}

unsafe fn write_out(values: &[f64], out: *mut f64, out_len: usize, written: *mut usize) -> Result<(), Failure> {
    if !written.is_null() {
        *written = values.len();
    }
    if out_len < values.len() {
        return Err(Failure(
            TatkStatus::BufferTooSmall,
            format!("output needs {} values, buffer holds {out_len}", values.len()),
        ));
    }
    if out.is_null() {
        return Err(Failure(TatkStatus::NullPointer, "output buffer is null".into()));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn series(x: *const f64, seq_len: usize, n_features: usize, what: &str) -> Result<Tensor, Failure> {
    let data = slice(x, seq_len * n_features, what)?;
    Ok(Tensor::new(vec![seq_len, n_features], data.to_vec())?)
}

fn target_of(target: i64) -> Target {
    if target < 0 {
        Target::Predicted
    } else {
        Target::Output(target as usize)
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tatk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model written by `tatk train`. Free it with [`tatk_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tatk_model_load(path: *const c_char, out: *mut *mut TatkModel) -> TatkStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(Failure(TatkStatus::NullPointer, "path or output handle is null".into()));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let model = load_model(Path::new(path))?;
        *out = Box::into_raw(Box::new(TatkModel { model }));
        Ok(())
    })
}

/// Releases a handle from [`tatk_model_load`]; null is ignored.
///
/// # Safety
/// `model` must come from [`tatk_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tatk_model_free(model: *mut TatkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tatk_model_n_features(model: *const TatkModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_features())
}

/// Number of outputs, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tatk_model_n_outputs(model: *const TatkModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_outputs())
}

/// Raw outputs `[batch, n_outputs]` for inputs `[batch, seq_len, n_features]`.
///
/// # Safety
/// `x` must hold `batch * seq_len * n_features` values and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn tatk_model_predict(
    model: *const TatkModel,
    x: *const f64,
    batch: usize,
    seq_len: usize,
    n_features: usize,
    out: *mut f64,
    out_len: usize,
) -> TatkStatus {
    guard(|| {
        let model = model_ref(model)?;
        let data = slice(x, batch * seq_len * n_features, "x")?;
        let y = model.predict(&Tensor::new(vec![batch, seq_len, n_features], data.to_vec())?)?;
        write_out(y.data(), out, out_len, ptr::null_mut())
    })
}

/// Integrated gradients `[seq_len, n_features]` of one series. A null
/// `baseline` means zeros; a negative `target` explains the prediction.
///
/// # Safety
/// `x` and a non-null `baseline` must hold `seq_len * n_features` values,
/// `out` must hold `out_len`.
#[no_mangle]
pub unsafe extern "C" fn tatk_integrated_gradients(
    model: *const TatkModel,
    x: *const f64,
    baseline: *const f64,
    seq_len: usize,
    n_features: usize,
    steps: usize,
    target: i64,
    out: *mut f64,
    out_len: usize,
) -> TatkStatus {
    guard(|| {
        let model = model_ref(model)?;
        let x = series(x, seq_len, n_features, "x")?;
        let base = if baseline.is_null() {
            Tensor::zeros(&[seq_len, n_features])
        } else {
            series(baseline, seq_len, n_features, "baseline")?
        };
        let y = model.predict(&x.reshape(&[1, seq_len, n_features])?)?;
        let k = target_of(target).resolve(model, y.data())?;
        let a = attribution::integrated_gradients(model, &x, &base, steps, k)?;
        write_out(a.data(), out, out_len, ptr::null_mut())
    })
}

/// Temporal integrated gradients `[seq_len, n_features]`: row `t` explains the
/// prediction on the first `t + 1` steps. The explained output of each step
/// goes to `targets_out` when it is non-null (`seq_len` entries).
///
/// # Safety
/// As [`tatk_integrated_gradients`]; `targets_out` must be null or hold `seq_len`.
#[no_mangle]
pub unsafe extern "C" fn tatk_temporal_integrated_gradients(
    model: *const TatkModel,
    x: *const f64,
    baseline: *const f64,
    seq_len: usize,
    n_features: usize,
    steps: usize,
    normalize: bool,
    target: i64,
    out: *mut f64,
    out_len: usize,
    targets_out: *mut usize,
) -> TatkStatus {
    guard(|| {
        let model = model_ref(model)?;
        let x = series(x, seq_len, n_features, "x")?;
        let base = if baseline.is_null() {
            Tensor::zeros(&[seq_len, n_features])
        } else {
            series(baseline, seq_len, n_features, "baseline")?
        };
        let r = attribution::temporal_integrated_gradients(model, &x, &base, steps, normalize, target_of(target))?;
        write_out(r.values.data(), out, out_len, ptr::null_mut())?;
        if !targets_out.is_null() {
            ptr::copy_nonoverlapping(r.targets.as_ptr(), targets_out, r.targets.len());
        }
        Ok(())
    })
}

/// Runs any attribution method described by a JSON object such as
/// `{"method": "kernel_shap", "n_samples": 200}` on one series.
///
/// `background` holds `n_background` series of the same shape and may be
/// null when `n_background` is 0. The result has `seq_len * n_features`
/// values, or `seq_len * seq_len * n_features` for temporal output; the
/// count is stored in `written` even when the buffer is too small.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `method_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tatk_attribute(
    model: *const TatkModel,
    method_json: *const c_char,
    x: *const f64,
    seq_len: usize,
    n_features: usize,
    background: *const f64,
    n_background: usize,
    target: i64,
    seed: u64,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> TatkStatus {
    guard(|| {
        let model = model_ref(model)?;
        if method_json.is_null() {
            return Err(Failure(TatkStatus::NullPointer, "method_json is null".into()));
        }
        let text = CStr::from_ptr(method_json).to_str().map_err(|_| invalid("method_json is not UTF-8"))?;
        let value: serde_json::Value = serde_json::from_str(text).map_err(Error::from)?;
        let method = Method::from_json(&value)?;
        method.validate()?;
        let x = series(x, seq_len, n_features, "x")?;
        let bg = if n_background == 0 {
            None
        } else {
            let data = slice(background, n_background * seq_len * n_features, "background")?;
            Some(Tensor::new(vec![n_background, seq_len, n_features], data.to_vec())?)
        };
        let ctx = Context {
            background: bg.as_ref(),
            seed,
        };
        let a = method.attribute(model, &x, target_of(target), &ctx)?;
        write_out(a.values.data(), out, out_len, written)
    })
}

/// Conditional intensity of type `k` at time `t` of a `dims`-variate Hawkes
/// process with exponential kernels. `alpha` and `beta` are `dims x dims`
/// row-major, entry `[k][n]` being the effect of type `n` on type `k`.
///
/// # Safety
/// `mu` holds `dims` values, `alpha` and `beta` `dims * dims`, `times` and
/// `kinds` `n_events`, `out` one.
#[no_mangle]
pub unsafe extern "C" fn tatk_hawkes_intensity(
    mu: *const f64,
    alpha: *const f64,
    beta: *const f64,
    dims: usize,
    times: *const f64,
    kinds: *const usize,
    n_events: usize,
    t: f64,
    k: usize,
    out: *mut f64,
) -> TatkStatus {
    guard(|| {
        if out.is_null() || (n_events > 0 && kinds.is_null()) {
            return Err(Failure(TatkStatus::NullPointer, "output or kinds is null".into()));
        }
        let mu = slice(mu, dims, "mu")?.to_vec();
        let rows = |p, what| -> Result<Vec<Vec<f64>>, Failure> {
            Ok(slice(p, dims * dims, what)?.chunks(dims.max(1)).map(<[f64]>::to_vec).collect())
        };
        let params = HawkesParams {
            mu,
            alpha: rows(alpha, "alpha")?,
            beta: rows(beta, "beta")?,
            horizon: t.max(f64::MIN_POSITIVE),
        };
        let times = slice(times, n_events, "times")?;
        let kinds = if n_events == 0 { &[][..] } else { std::slice::from_raw_parts(kinds, n_events) };
        let history: Vec<Event> = times.iter().zip(kinds).map(|(&time, &kind)| Event { time, kind }).collect();
        *out = hawkes_intensity(&params, &history, t, k)?;
        Ok(())
    })
}

/// Local outlier factor of the query `x` (`dim` values) against `n_points`
/// reference points, with `k` neighbours. `clamped` may be null.
///
/// # Safety
/// `x` holds `dim` values, `points` `n_points * dim`, `out` one.
#[no_mangle]
pub unsafe extern "C" fn tatk_lof_score(
    x: *const f64,
    points: *const f64,
    n_points: usize,
    dim: usize,
    k: usize,
    out: *mut f64,
    clamped: *mut bool,
) -> TatkStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(TatkStatus::NullPointer, "output is null".into()));
        }
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let x = slice(x, dim, "x")?;
        let pts: Vec<Vec<f64>> = slice(points, n_points * dim, "points")?.chunks(dim).map(<[f64]>::to_vec).collect();
        let s = attribution::lof_score(x, &pts, k)?;
        *out = s.value;
        if !clamped.is_null() {
            *clamped = s.clamped;
        }
        Ok(())
    })
}
