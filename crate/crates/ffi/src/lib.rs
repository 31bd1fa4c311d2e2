//! C ABI for `stochinv`.
//!
//! Models are built from the JSON spec format and handed out as opaque
//! `SiModel` pointers. Every function returns an `SiStatus`; on failure the
//! message is available from `si_last_error_message` on the same thread.
//! Matrices cross the boundary as column-major `double` arrays.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::{DMatrix, DVector};
use stochinv::checker::{check_domain, check_point, Tolerances};
use stochinv::geometry::{Domain, Window};
use stochinv::matcalc::{drift_correction, sym_pinv, CorrectionOptions, SymMatrix};
use stochinv::model::DiffusionModel;
use stochinv::spec::ModelSpec;
use stochinv::Error;

/// Result code of every fallible entry point.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidSpec = 3,
    Evaluation = 4,
    Dimension = 5,
    Panic = 6,
}

/// Opaque model handle.
pub struct SiModel {
    dim: usize,
    model: DiffusionModel,
    domain: Domain,
    tolerances: Tolerances,
}

/// Outcome of the pointwise test for one normal ray.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SiPointVerdict {
    pub kernel_residual: f64,
    pub corrected_drift_margin: f64,
    pub kernel_tolerance: f64,
    pub drift_tolerance: f64,
    pub pass: bool,
    pub rank_warning: bool,
    pub routes_agree: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Spec { .. } => SiStatus::InvalidSpec,
            Error::Dimension { .. } => SiStatus::Dimension,
            _ => SiStatus::Evaluation,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SiStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SiStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SiStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SiStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const SiModel) -> Result<&'a SiModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

unsafe fn vector_in(
    p: *const f64,
    len: usize,
    dim: usize,
    what: &str,
) -> Result<DVector<f64>, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != dim {
        return Err(Failure(
            SiStatus::Dimension,
            format!("{what} has length {len}, model dimension is {dim}"),
        ));
    }
    Ok(DVector::from_column_slice(slice::from_raw_parts(p, len)))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s)
        .expect("JSON contains no nul bytes")
        .into_raw()
}

/// Parses a JSON model spec. On success `*out` owns a handle to release with
/// `si_model_free`.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn si_model_from_json(
    json: *const c_char,
    out: *mut *mut SiModel,
) -> SiStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(SiStatus::InvalidUtf8, e.to_string()))?;
        let spec = ModelSpec::from_json(text)?;
        let handle = SiModel {
            dim: spec.dimension,
            model: spec.model()?.to_generic(),
            domain: spec.domain()?,
            tolerances: spec.tolerances(),
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from `si_model_from_json` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn si_model_free(model: *mut SiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn si_model_dim(model: *const SiModel) -> usize {
    model.as_ref().map_or(0, |m| m.dim)
}

/// Writes `1/2 sum_j DC^j (C C^+)^j` at `x` into `out` (length `len`).
///
/// # Safety
/// `x` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn si_drift_correction(
    model: *const SiModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> SiStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = vector_in(x, len, m.dim, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = CorrectionOptions {
            rank_tol: m.tolerances.rank_tol,
            fd_step: m.tolerances.fd_step,
        };
        let c = drift_correction(&m.model, &x, opts)?;
        slice::from_raw_parts_mut(out, len).copy_from_slice(c.value.as_slice());
        Ok(())
    })
}

/// Pointwise test at `x` for the normal ray `u`, both of length `len`.
///
/// # Safety
/// `x` and `u` must point to `len` doubles and `out` to a verdict.
#[no_mangle]
pub unsafe extern "C" fn si_check_point(
    model: *const SiModel,
    x: *const f64,
    u: *const f64,
    len: usize,
    out: *mut SiPointVerdict,
) -> SiStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = vector_in(x, len, m.dim, "x")?;
        let u = vector_in(u, len, m.dim, "u")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = check_point(&m.model, &x, &u, &m.tolerances)?;
        *out = SiPointVerdict {
            kernel_residual: v.kernel_residual,
            corrected_drift_margin: v.corrected_drift_margin,
            kernel_tolerance: v.kernel_tolerance,
            drift_tolerance: v.drift_tolerance,
            pass: v.pass,
            rank_warning: v.rank_warning,
            routes_agree: v.routes_agree,
        };
        Ok(())
    })
}

/// Samples the domain boundary in the window `[lo, hi]^d` and writes the
/// JSON report to `*out_json`, to be released with `si_string_free`.
/// `*pass` receives the overall verdict.
///
/// # Safety
/// `out_json` and `pass` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn si_check_domain(
    model: *const SiModel,
    n_samples: usize,
    lo: f64,
    hi: f64,
    pass: *mut bool,
    out_json: *mut *mut c_char,
) -> SiStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        if pass.is_null() {
            return Err(null("pass"));
        }
        *out_json = ptr::null_mut();
        if !(lo < hi) {
            return Err(Failure(
                SiStatus::Evaluation,
                format!("empty window [{lo}, {hi}]"),
            ));
        }
        let report = check_domain(
            &m.model,
            &m.domain,
            n_samples,
            &Window::uniform(m.dim, lo, hi),
            &m.tolerances,
        )?;
        *pass = report.overall_pass;
        let text = serde_json::to_string(&report)
            .map_err(|e| Failure(SiStatus::Evaluation, e.to_string()))?;
        *out_json = into_c_string(text);
        Ok(())
    })
}

/// Moore-Penrose pseudoinverse of the symmetric `d x d` matrix `a`
/// (column-major) into `out`.
///
/// # Safety
/// `a` and `out` must point to `d * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn si_sym_pinv(
    a: *const f64,
    d: usize,
    rank_tol: f64,
    out: *mut f64,
) -> SiStatus {
    guard(|| {
        if a.is_null() {
            return Err(null("a"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if d == 0 {
            return Err(Failure(
                SiStatus::Dimension,
                "dimension must be positive".into(),
            ));
        }
        let m = DMatrix::from_column_slice(d, d, slice::from_raw_parts(a, d * d));
        let p = sym_pinv(&SymMatrix::new(m)?, rank_tol)?;
        slice::from_raw_parts_mut(out, d * d).copy_from_slice(p.as_matrix().as_slice());
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn si_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn si_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn si_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
