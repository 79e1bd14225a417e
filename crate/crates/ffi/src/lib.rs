//! C ABI for loading a trained ensemble and matching query images.
//!
//! Every function returns an [`SvprStatus`]. On failure the message is kept
//! per thread and can be read with [`svpr_last_error_message`]. Handles are
//! created by [`svpr_ensemble_load`] and released with
//! [`svpr_ensemble_free`]; a handle may be shared between threads for
//! matching.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use snn_vpr::ensemble::{match_query, EnsembleModel, MatchResult};
use snn_vpr::imaging::ImageGray;
use snn_vpr::store::load_ensemble;
use snn_vpr::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvprStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Ingest = 3,
    Config = 4,
    Io = 5,
    Corrupt = 6,
    UnsupportedVersion = 7,
    State = 8,
    Internal = 9,
    Panic = 10,
}

/// Opaque ensemble handle.
pub struct SvprEnsemble {
    model: EnsembleModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> SvprStatus {
    match err {
        Error::Ingest { .. } => SvprStatus::Ingest,
        Error::Config(_) => SvprStatus::Config,
        Error::Io { .. } => SvprStatus::Io,
        Error::Corrupt { .. } => SvprStatus::Corrupt,
        Error::UnsupportedVersion { .. } => SvprStatus::UnsupportedVersion,
        Error::State(_) => SvprStatus::State,
        Error::Internal(_) => SvprStatus::Internal,
        Error::Module { source, .. } => status_of(source),
    }
}

struct Failure(SvprStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: SvprStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> SvprStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SvprStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            SvprStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(SvprStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SvprStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a>(h: *const SvprEnsemble) -> Result<&'a SvprEnsemble, Failure> {
    h.as_ref().ok_or_else(|| fail(SvprStatus::NullPointer, "ensemble handle is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn svpr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn svpr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load an archive directory. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svpr_ensemble_load(path: *const c_char, out: *mut *mut SvprEnsemble) -> SvprStatus {
    guarded(|| {
        if out.is_null() {
            return Err(fail(SvprStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let model = load_ensemble(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SvprEnsemble { model }));
        Ok(())
    })
}

/// Release a handle. NULL is ignored.
///
/// # Safety
/// `ensemble` must come from [`svpr_ensemble_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn svpr_ensemble_free(ensemble: *mut SvprEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// # Safety
/// `ensemble` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svpr_ensemble_place_count(ensemble: *const SvprEnsemble, out: *mut usize) -> SvprStatus {
    guarded(|| {
        let h = handle(ensemble)?;
        let out = out.as_mut().ok_or_else(|| fail(SvprStatus::NullPointer, "out is null"))?;
        *out = h.model.global_place_count;
        Ok(())
    })
}

/// # Safety
/// `ensemble` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svpr_ensemble_expert_count(ensemble: *const SvprEnsemble, out: *mut usize) -> SvprStatus {
    guarded(|| {
        let h = handle(ensemble)?;
        let out = out.as_mut().ok_or_else(|| fail(SvprStatus::NullPointer, "out is null"))?;
        *out = h.model.experts.len();
        Ok(())
    })
}

/// Number of neurons currently excluded from voting.
///
/// # Safety
/// `ensemble` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svpr_ensemble_hyperactive_count(
    ensemble: *const SvprEnsemble,
    out: *mut usize,
) -> SvprStatus {
    guarded(|| {
        let h = handle(ensemble)?;
        let out = out.as_mut().ok_or_else(|| fail(SvprStatus::NullPointer, "out is null"))?;
        *out = h.model.hyperactive_count();
        Ok(())
    })
}

/// Width and height images are resized to before encoding.
///
/// # Safety
/// `ensemble` must be a live handle; `width` and `height` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn svpr_ensemble_input_size(
    ensemble: *const SvprEnsemble,
    width: *mut usize,
    height: *mut usize,
) -> SvprStatus {
    guarded(|| {
        let h = handle(ensemble)?;
        if width.is_null() || height.is_null() {
            return Err(fail(SvprStatus::NullPointer, "out is null"));
        }
        *width = h.model.config.imaging.width;
        *height = h.model.config.imaging.height;
        Ok(())
    })
}

unsafe fn write_ranking(
    result: &MatchResult,
    places: *mut usize,
    scores: *mut u64,
    capacity: usize,
    len: *mut usize,
    no_evidence: *mut bool,
) -> Result<(), Failure> {
    if len.is_null() {
        return Err(fail(SvprStatus::NullPointer, "len is null"));
    }
    let n = capacity.min(result.ranking.len());
    if n > 0 && places.is_null() {
        return Err(fail(SvprStatus::NullPointer, "places is null"));
    }
    for (i, &(p, s)) in result.ranking.iter().take(n).enumerate() {
        *places.add(i) = p;
        if !scores.is_null() {
            *scores.add(i) = s;
        }
    }
    *len = n;
    if !no_evidence.is_null() {
        *no_evidence = result.no_evidence;
    }
    Ok(())
}

/// Match an image file. The best `capacity` places are written to `places`
/// (and their scores to `scores` unless it is NULL), best first; `*len`
/// receives the number written. `index` seeds the query spike train.
///
/// # Safety
/// Output arrays must hold `capacity` elements; other pointers must be valid
/// or NULL where documented.
#[no_mangle]
pub unsafe extern "C" fn svpr_match_file(
    ensemble: *const SvprEnsemble,
    path: *const c_char,
    index: usize,
    places: *mut usize,
    scores: *mut u64,
    capacity: usize,
    len: *mut usize,
    no_evidence: *mut bool,
) -> SvprStatus {
    guarded(|| {
        let h = handle(ensemble)?;
        let img = h.model.config.imaging.load(&path_arg(path)?)?;
        let result = match_query(&h.model, &img, index)?;
        write_ranking(&result, places, scores, capacity, len, no_evidence)
    })
}

/// Match a row-major 8-bit grayscale image of any size; it is resized and
/// normalized like images loaded from disk.
///
/// # Safety
/// `pixels` must hold `width * height` bytes; see [`svpr_match_file`] for
/// the outputs.
#[no_mangle]
pub unsafe extern "C" fn svpr_match_gray8(
    ensemble: *const SvprEnsemble,
    pixels: *const u8,
    width: usize,
    height: usize,
    index: usize,
    places: *mut usize,
    scores: *mut u64,
    capacity: usize,
    len: *mut usize,
    no_evidence: *mut bool,
) -> SvprStatus {
    guarded(|| {
        let h = handle(ensemble)?;
        if pixels.is_null() {
            return Err(fail(SvprStatus::NullPointer, "pixels is null"));
        }
        let count = width
            .checked_mul(height)
            .filter(|&c| c > 0)
            .ok_or_else(|| fail(SvprStatus::InvalidArgument, "image dimensions must be non-zero"))?;
        let data = std::slice::from_raw_parts(pixels, count);
        let raw = ImageGray::from_u8(width, height, data)?;
        let img = h.model.config.imaging.preprocess(&raw)?;
        let result = match_query(&h.model, &img, index)?;
        write_ranking(&result, places, scores, capacity, len, no_evidence)
    })
}
