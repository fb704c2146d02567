//! C ABI over `rfs-energy`.
//!
//! Every function returns an [`RfsStatus`]; results go through out-pointers.
//! On failure a message is kept per thread and can be read with
//! [`rfs_last_error_message`]. Sets and models are opaque handles that must be
//! released with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rfs_energy::{
    auc, fit_model_from, mahalanobis_sq, read_ppf, score_set, write_ppf, Error, Label, ModelParams,
    Orientation, PointPatternSet, ScoreMethod, ScoringConfig,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Validation = 6,
    Estimation = 7,
    Model = 8,
    Scoring = 9,
    Evaluation = 10,
    Panic = 11,
}

/// Score selector for [`rfs_score`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfsMethod {
    Energy = 0,
    As = 1,
    Loglik = 2,
}

/// Opaque descriptor set.
pub struct RfsSet(PointPatternSet);

/// Opaque fitted model.
pub struct RfsModel(ModelParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RfsStatus {
    match e.root() {
        Error::Io { .. } => RfsStatus::Io,
        Error::Format { .. } | Error::Truncated { .. } | Error::Json { .. } => RfsStatus::Format,
        Error::Data(_) => RfsStatus::Data,
        Error::Validation(_) => RfsStatus::Validation,
        Error::Estimation(_) => RfsStatus::Estimation,
        Error::Model(_) => RfsStatus::Model,
        Error::Scoring(_) => RfsStatus::Scoring,
        Error::Evaluation(_) => RfsStatus::Evaluation,
        Error::AtIndex { .. } => unreachable!("root() strips index context"),
    }
}

struct Fail(RfsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RfsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(RfsStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RfsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
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
            RfsStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn set_arg<'a>(p: *const RfsSet) -> Result<&'a PointPatternSet, Fail> {
    p.as_ref().map(|s| &s.0).ok_or_else(|| null("set"))
}

unsafe fn model_arg<'a>(p: *const RfsModel) -> Result<&'a ModelParams, Fail> {
    p.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

/// Message of the last failed call on this thread, or null if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rfs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a PPF file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_set_read(path: *const c_char, out: *mut *mut RfsSet) -> RfsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let set = read_ppf(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(RfsSet(set)));
        Ok(())
    })
}

/// Builds a set from `n` row-major descriptors of dimension `dim`. `data` may
/// be null when `n` is 0.
///
/// # Safety
/// `data` must point to `n * dim` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_set_from_descriptors(
    dim: usize,
    data: *const f32,
    n: usize,
    out: *mut *mut RfsSet,
) -> RfsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| invalid("n * dim overflows"))?;
        let values = if len == 0 {
            Vec::new()
        } else if data.is_null() {
            return Err(null("data"));
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        let set = PointPatternSet::new(dim, values)?;
        *out = Box::into_raw(Box::new(RfsSet(set)));
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_set_len(set: *const RfsSet, out: *mut usize) -> RfsStatus {
    guard(|| {
        *out_arg(out, "out")? = set_arg(set)?.len();
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_set_dim(set: *const RfsSet, out: *mut usize) -> RfsStatus {
    guard(|| {
        *out_arg(out, "out")? = set_arg(set)?.dim();
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rfs_set_write(set: *const RfsSet, path: *const c_char) -> RfsStatus {
    guard(|| {
        write_ppf(set_arg(set)?, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a set. Null is ignored.
///
/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfs_set_free(set: *mut RfsSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Fits a model from `n_sets` training sets using `jobs` worker threads.
///
/// # Safety
/// `sets` must point to `n_sets` live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_model_fit(
    sets: *const *const RfsSet,
    n_sets: usize,
    jobs: usize,
    out: *mut *mut RfsModel,
) -> RfsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if sets.is_null() {
            return Err(null("sets"));
        }
        let refs = std::slice::from_raw_parts(sets, n_sets)
            .iter()
            .map(|&p| set_arg(p))
            .collect::<Result<Vec<_>, _>>()?;
        let report = fit_model_from(refs.as_slice(), jobs.max(1))?;
        *out = Box::into_raw(Box::new(RfsModel(report.model)));
        Ok(())
    })
}

/// Loads a model JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_model_load(path: *const c_char, out: *mut *mut RfsModel) -> RfsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = ModelParams::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(RfsModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rfs_model_save(model: *const RfsModel, path: *const c_char) -> RfsStatus {
    guard(|| {
        model_arg(model)?.save(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_model_dim(model: *const RfsModel, out: *mut usize) -> RfsStatus {
    guard(|| {
        *out_arg(out, "out")? = model_arg(model)?.dim();
        Ok(())
    })
}

/// Poisson intensity ρ.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_model_rho(model: *const RfsModel, out: *mut f64) -> RfsStatus {
    guard(|| {
        *out_arg(out, "out")? = model_arg(model)?.rho();
        Ok(())
    })
}

/// Shrinkage intensity α.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_model_alpha(model: *const RfsModel, out: *mut f64) -> RfsStatus {
    guard(|| {
        *out_arg(out, "out")? = model_arg(model)?.alpha();
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfs_model_free(model: *mut RfsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Squared Mahalanobis distance of one `dim`-vector.
///
/// # Safety
/// `x` must point to `dim` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_mahalanobis_sq(
    model: *const RfsModel,
    x: *const f32,
    dim: usize,
    out: *mut f64,
) -> RfsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = model_arg(model)?;
        if x.is_null() {
            return Err(null("x"));
        }
        *out = mahalanobis_sq(std::slice::from_raw_parts(x, dim), model)?;
        Ok(())
    })
}

/// Raw score of a set. `method` is an [`RfsMethod`] value; `top_k_percent`
/// applies to the energy, `as_squared` to AS. The log-likelihood is returned
/// unnegated.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_score(
    model: *const RfsModel,
    set: *const RfsSet,
    method: u32,
    top_k_percent: f64,
    as_squared: bool,
    out: *mut f64,
) -> RfsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = model_arg(model)?;
        let set = set_arg(set)?;
        let method = match method {
            m if m == RfsMethod::Energy as u32 => ScoreMethod::Energy,
            m if m == RfsMethod::As as u32 => ScoreMethod::As,
            m if m == RfsMethod::Loglik as u32 => ScoreMethod::Loglik,
            other => return Err(invalid(format!("unknown method {other}"))),
        };
        let cfg = ScoringConfig {
            method,
            top_k_percent,
            as_squared,
            orientation: Orientation::Raw,
        };
        *out = score_set(set, model, &cfg)?;
        Ok(())
    })
}

/// Mann-Whitney AUC of `n` scores; `labels[i]` is 0 (normal) or 1
/// (anomalous), higher scores mean more anomalous.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfs_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> RfsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if n > 0 && (scores.is_null() || labels.is_null()) {
            return Err(null("scores or labels"));
        }
        let pairs = if n == 0 {
            Vec::new()
        } else {
            let s = std::slice::from_raw_parts(scores, n);
            let l = std::slice::from_raw_parts(labels, n);
            s.iter()
                .zip(l)
                .map(|(&v, &lab)| Label::try_from(lab).map(|lab| (v, lab)).map_err(invalid))
                .collect::<Result<Vec<_>, _>>()?
        };
        *out = auc(&pairs)?;
        Ok(())
    })
}
