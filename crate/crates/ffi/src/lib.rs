//! C ABI over the invop library.
//!
//! Datasets and trained models cross the boundary as opaque handles that the
//! caller releases with the matching `_free` function. Every fallible call
//! returns an [`InvopStatus`]; on failure [`invop_last_error`] describes the
//! most recent error on the calling thread. Panics are caught at the boundary
//! and reported as [`InvopStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use invop::cli::audit::{run_all, AuditFault};
use invop::cli::{exit_code, EXIT_INVALID};
use invop::datagen::{generate, solver_residuals, DataConfig, Dataset, PointSet};
use invop::model::PidionModel;
use invop::physics::{PdeProblem, ProblemKind};
use invop::training::load_checkpoint;
use invop::Error;

/// Result of a call. Values 2 and 3 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvopStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid or incompatible input (bad path, sizes, configuration).
    InvalidInput = 2,
    /// Solver, numerical or I/O failure.
    Runtime = 3,
    /// At least one self-check audit failed.
    AuditFailed = 4,
    /// A panic was caught at the boundary.
    Panic = 5,
}

/// Per-sample field selector for [`invop_dataset_sample_field`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvopField {
    Measurement = 0,
    U = 1,
    S = 2,
}

/// Opaque dataset handle.
pub struct InvopDataset {
    inner: Dataset,
}

/// Opaque handle to a trained model loaded from a checkpoint.
pub struct InvopModel {
    inner: PidionModel,
    problem: ProblemKind,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(e: Error) -> InvopStatus {
    set_error(&e.to_string());
    if exit_code(&e) == EXIT_INVALID {
        InvopStatus::InvalidInput
    } else {
        InvopStatus::Runtime
    }
}

fn null(name: &str) -> InvopStatus {
    set_error(&format!("argument '{name}' is null"));
    InvopStatus::NullArgument
}

/// Run `f`, converting panics into [`InvopStatus::Panic`].
fn guard(f: impl FnOnce() -> InvopStatus) -> InvopStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            InvopStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, InvopStatus> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(&format!("argument '{name}' is not valid UTF-8"));
        InvopStatus::InvalidInput
    })
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], InvopStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn invop_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn invop_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generate `n_samples` samples of `problem` ("rd", "helmholtz", "darcy")
/// with the default recipe. `grid` = 0 keeps the default resolution.
///
/// # Safety
/// `problem` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invop_dataset_generate(
    problem: *const c_char,
    n_samples: usize,
    seed: u64,
    grid: usize,
    out: *mut *mut InvopDataset,
) -> InvopStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let tag = tri!(str_arg(problem, "problem"));
        let kind = match ProblemKind::parse(tag) {
            Ok(k) => k,
            Err(e) => return fail(e),
        };
        let mut c = DataConfig::default_for(kind);
        c.n_samples = n_samples;
        c.seed = seed;
        if grid > 0 {
            c.grid = grid;
        }
        match generate(&c) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(InvopDataset { inner: d }));
                InvopStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a dataset directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invop_dataset_load(path: *const c_char, out: *mut *mut InvopDataset) -> InvopStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let p = PathBuf::from(tri!(str_arg(path, "path")));
        match Dataset::load(&p) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(InvopDataset { inner: d }));
                InvopStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Write a dataset directory, replacing any previous one at `path`.
///
/// # Safety
/// `ds` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn invop_dataset_save(ds: *const InvopDataset, path: *const c_char) -> InvopStatus {
    guard(|| {
        let Some(ds) = ds.as_ref() else { return null("ds") };
        let p = PathBuf::from(tri!(str_arg(path, "path")));
        match ds.inner.save(&p) {
            Ok(()) => InvopStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn invop_dataset_len(ds: *const InvopDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Values per sample of `field`; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn invop_dataset_field_len(ds: *const InvopDataset, field: InvopField) -> usize {
    ds.as_ref().map_or(0, |d| match field {
        InvopField::Measurement => d.inner.measurement_len(),
        InvopField::U => d.inner.u_grid.n_points(),
        InvopField::S => d.inner.s_grid.n_points(),
    })
}

/// Copy one field of sample `index` into `out`, which holds `out_len`
/// values; `out_len` must equal [`invop_dataset_field_len`].
///
/// # Safety
/// `ds` must come from this library and `out` point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn invop_dataset_sample_field(
    ds: *const InvopDataset,
    index: usize,
    field: InvopField,
    out: *mut f64,
    out_len: usize,
) -> InvopStatus {
    guard(|| {
        let Some(ds) = ds.as_ref() else { return null("ds") };
        let Some(sample) = ds.inner.samples.get(index) else {
            return fail(Error::Validation(format!("sample {index} is out of range ({} samples)", ds.inner.len())));
        };
        let src = match field {
            InvopField::Measurement => &sample.measurement,
            InvopField::U => &sample.u,
            InvopField::S => &sample.s,
        };
        if src.len() != out_len {
            return fail(Error::Dimension(format!("field has {} values, buffer {out_len}", src.len())));
        }
        if out.is_null() {
            return null("out");
        }
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(src);
        InvopStatus::Ok
    })
}

/// Largest relative solver residual over the samples, written to `worst`.
///
/// # Safety
/// `ds` must come from this library and `worst` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invop_dataset_residual(ds: *const InvopDataset, worst: *mut f64) -> InvopStatus {
    guard(|| {
        let Some(ds) = ds.as_ref() else { return null("ds") };
        if worst.is_null() {
            return null("worst");
        }
        match solver_residuals(&ds.inner) {
            Ok(r) => {
                *worst = r.into_iter().fold(0.0, f64::max);
                InvopStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a dataset. Null is ignored.
///
/// # Safety
/// `ds` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn invop_dataset_free(ds: *mut InvopDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Load the model stored in a checkpoint directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invop_model_load(path: *const c_char, out: *mut *mut InvopModel) -> InvopStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let p = PathBuf::from(tri!(str_arg(path, "path")));
        match load_checkpoint(&p) {
            Ok(ck) => {
                *out = Box::into_raw(Box::new(InvopModel { inner: ck.model, problem: ck.config.problem }));
                InvopStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of trainable parameters; 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn invop_model_param_count(model: *const InvopModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Coordinates per point for `u` (first) and `s` (second).
///
/// # Safety
/// `model` must come from this library; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn invop_model_dims(model: *const InvopModel, u_dim: *mut usize, s_dim: *mut usize) -> InvopStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return null("model") };
        if u_dim.is_null() || s_dim.is_null() {
            return null("u_dim/s_dim");
        }
        let p = PdeProblem::default_for(m.problem);
        *u_dim = p.u_dim();
        *s_dim = p.s_dim();
        InvopStatus::Ok
    })
}

/// Predict `u` at `n_u` points and `s` at `n_s` points from one measurement.
/// Points are packed coordinate-fastest (`x0 y0 x1 y1 ...`, or `x t` for
/// reaction-diffusion `u`); outputs hold `n_u` and `n_s` values.
///
/// # Safety
/// All pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn invop_model_predict(
    model: *const InvopModel,
    measurement: *const f64,
    measurement_len: usize,
    u_points: *const f64,
    n_u: usize,
    s_points: *const f64,
    n_s: usize,
    u_out: *mut f64,
    s_out: *mut f64,
) -> InvopStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return null("model") };
        let p = PdeProblem::default_for(m.problem);
        let meas = tri!(slice_arg(measurement, measurement_len, "measurement"));
        let up = tri!(slice_arg(u_points, n_u * p.u_dim(), "u_points"));
        let sp = tri!(slice_arg(s_points, n_s * p.s_dim(), "s_points"));
        if (n_u > 0 && u_out.is_null()) || (n_s > 0 && s_out.is_null()) {
            return null("u_out/s_out");
        }
        let pts = PointSet::new(p.u_dim(), up.to_vec()).and_then(|u| Ok((u, PointSet::new(p.s_dim(), sp.to_vec())?)));
        let (u_set, s_set) = match pts {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        match m.inner.predict_batch(&[meas], &u_set, &s_set) {
            Ok((u, s)) => {
                if n_u > 0 {
                    std::slice::from_raw_parts_mut(u_out, n_u).copy_from_slice(&u[0]);
                }
                if n_s > 0 {
                    std::slice::from_raw_parts_mut(s_out, n_s).copy_from_slice(&s[0]);
                }
                InvopStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn invop_model_free(model: *mut InvopModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Run the self-check audits. A non-zero `inject_fault` corrupts the tanh
/// derivative so the gradient audit must fail.
#[no_mangle]
pub extern "C" fn invop_check(inject_fault: i32) -> InvopStatus {
    guard(|| {
        let fault = (inject_fault != 0).then_some(AuditFault::TanhDerivative);
        let failed: Vec<String> = run_all(None, fault).into_iter().filter(|o| !o.passed).map(|o| o.line()).collect();
        if failed.is_empty() {
            InvopStatus::Ok
        } else {
            set_error(&failed.join("; "));
            InvopStatus::AuditFailed
        }
    })
}
