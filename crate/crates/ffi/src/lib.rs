//! C ABI over the registration model.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns an [`RfStatus`]; the text of
//! the most recent failure on the calling thread is available from
//! [`rf_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use regfactor::model::{Frame, FrameCache, ModelConfig, RegistrationModel};
use regfactor::train::load_checkpoint;
use regfactor::{Error, Tensor};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Shape = 3,
    Range = 4,
    Format = 5,
    Io = 6,
    Numeric = 7,
    Contract = 8,
    Panic = 9,
}

/// A loaded or freshly initialised registration model.
pub struct RfModel {
    inner: RegistrationModel,
}

/// Per-sequence frame history used by the temporal encoder.
pub struct RfCache {
    inner: FrameCache,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RfStatus {
    match e {
        Error::Shape(_) => RfStatus::Shape,
        Error::Range { .. } => RfStatus::Range,
        Error::Format(_) | Error::Data(_) => RfStatus::Format,
        Error::Config(_) | Error::ConfigLine { .. } => RfStatus::Config,
        Error::Io { .. } => RfStatus::Io,
        Error::NonFinite(_) | Error::Numeric(_) => RfStatus::Numeric,
        Error::Contract(_) => RfStatus::Contract,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RfStatus, String)>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RfStatus::Panic
        }
    }
}

fn lift(e: Error) -> (RfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RfStatus, String) {
    (RfStatus::NullPointer, format!("{what} is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Creates a model with the desk-scale architecture at `image_size` and
/// weights drawn from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_model_new(image_size: usize, seed: u64, out: *mut *mut RfModel) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ModelConfig::desk().with_image_size(image_size);
        cfg.validate().map_err(lift)?;
        let inner = RegistrationModel::new(cfg, seed).map_err(lift)?;
        *out = Box::into_raw(Box::new(RfModel { inner }));
        Ok(())
    })
}

/// Loads the model weights from a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as in [`rf_model_new`].
#[no_mangle]
pub unsafe extern "C" fn rf_model_load(path: *const c_char, out: *mut *mut RfModel) -> RfStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (RfStatus::Format, "path is not valid utf-8".to_string()))?;
        let trainer = load_checkpoint(Path::new(path)).map_err(lift)?;
        *out = Box::into_raw(Box::new(RfModel { inner: trainer.model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `rf_model_new`/`rf_model_load` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn rf_model_free(model: *mut RfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable scalars, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_model_param_count(model: *const RfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Side length of the square images the model accepts, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_model_image_size(model: *const RfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.image_size)
}

/// Creates an empty frame cache sized for `model`.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_cache_new(model: *const RfModel, out: *mut *mut RfCache) -> RfStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = FrameCache::new(model.inner.config.window);
        *out = Box::into_raw(Box::new(RfCache { inner }));
        Ok(())
    })
}

/// Forgets all history so the cache can start a new sequence.
///
/// # Safety
/// `cache` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_cache_reset(cache: *mut RfCache) -> RfStatus {
    guard(|| {
        cache.as_mut().ok_or_else(|| null("cache"))?.inner.reset();
        Ok(())
    })
}

/// Number of frames currently held, or 0 for null.
///
/// # Safety
/// `cache` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_cache_len(cache: *const RfCache) -> usize {
    cache.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `cache` must come from `rf_cache_new` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn rf_cache_free(cache: *mut RfCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Registers frame `t` of sequence `seq_id`. `moving`, `fixed` and `out` are
/// row-major `height × width` grayscale images with values in [0, 1]; both
/// sides must equal the model's image size. Frames of one sequence must be
/// passed in order through the same cache. On failure `out` is untouched.
///
/// # Safety
/// Image pointers must reference `width * height` doubles; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn rf_register(
    model: *const RfModel,
    cache: *mut RfCache,
    seq_id: u64,
    t: usize,
    moving: *const f64,
    fixed: *const f64,
    width: usize,
    height: usize,
    out: *mut f64,
) -> RfStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let cache = &mut cache.as_mut().ok_or_else(|| null("cache"))?.inner;
        if moving.is_null() || fixed.is_null() || out.is_null() {
            return Err(null("image buffer"));
        }
        let size = model.config.image_size;
        if width != size || height != size {
            return Err((
                RfStatus::Shape,
                format!("image is {width}x{height}, model expects {size}x{size}"),
            ));
        }
        let n = width * height;
        let tensor = |p: *const f64| {
            Tensor::new(vec![1, 1, height, width], std::slice::from_raw_parts(p, n).to_vec())
                .map_err(lift)
        };
        let (m, f) = (tensor(moving)?, tensor(fixed)?);
        let frame = Frame { cache: 0, seq_id, t };
        // Work on a copy so a failed call leaves the cache as it was.
        let mut caches = [cache.clone()];
        let y = model.register(&m, &f, &[frame], &mut caches).map_err(lift)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(y.data());
        let [c] = caches;
        *cache = c;
        Ok(())
    })
}
