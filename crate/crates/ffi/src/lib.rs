//! C ABI over the imly pipeline.
//!
//! Every function returns an [`ImlyStatus`]. On failure a human-readable
//! message is kept per thread and can be fetched with
//! [`imly_last_error_message`]. Strings handed out by the library must be
//! released with [`imly_string_free`]; the pipeline handle with
//! [`imly_pipeline_free`]. A handle may be shared between threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use imly::pipeline::{Models, ModelPaths, Pipeline, PipelineConfig, PipelineError};

/// Result codes. Zero means success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImlyStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The config text had an unknown key or an out-of-range value.
    InvalidConfig = 3,
    /// The audio could not be decoded or was too short.
    InvalidAudio = 4,
    /// A model file was missing or malformed.
    ModelError = 5,
    /// Redecode was asked for audio whose acoustics are not cached.
    CacheMiss = 6,
    /// A bug inside the library, including caught panics.
    Internal = 7,
}

/// Opaque pipeline handle.
pub struct ImlyPipeline {
    inner: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    // interior NULs would truncate the message on the C side, so drop them
    let msg: String = msg.into().replace('\0', "");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: ImlyStatus, msg: impl Into<String>) -> ImlyStatus {
    set_error(msg);
    status
}

fn classify(e: &PipelineError) -> ImlyStatus {
    match e {
        PipelineError::AudioTooShort { .. } | PipelineError::Wav(_) | PipelineError::Audio(_) => ImlyStatus::InvalidAudio,
        PipelineError::Io { .. }
        | PipelineError::Model { .. }
        | PipelineError::Lexicon { .. }
        | PipelineError::Lm { .. }
        | PipelineError::ChannelFile { .. } => ImlyStatus::ModelError,
        PipelineError::Config(_) | PipelineError::Channel(_) => ImlyStatus::InvalidConfig,
        PipelineError::CacheMiss { .. } => ImlyStatus::CacheMiss,
        PipelineError::Separator(_) | PipelineError::Dsp(_) | PipelineError::Recognizer(_) => ImlyStatus::Internal,
    }
}

/// Runs `f`, turning panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), ImlyStatus>) -> ImlyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ImlyStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(ImlyStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

/// Reads an optional C string. NULL maps to `None`.
unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, ImlyStatus> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(Some).map_err(|_| fail(ImlyStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn config_from(text: Option<&str>) -> Result<PipelineConfig, ImlyStatus> {
    let text = text.unwrap_or("");
    let cfg = PipelineConfig::from_text(text).map_err(|e| fail(ImlyStatus::InvalidConfig, e.to_string()))?;
    cfg.validate().map_err(|e| fail(ImlyStatus::InvalidConfig, e.to_string()))?;
    Ok(cfg)
}

fn hand_out(json: String, out: *mut *mut c_char) -> Result<(), ImlyStatus> {
    let c = CString::new(json).map_err(|_| fail(ImlyStatus::Internal, "result contained a NUL byte"))?;
    // SAFETY: the caller checked `out` for NULL
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Loads models from `data_dir` and stores a new handle in `*out`.
///
/// `data_dir` may be NULL, in which case `$IMLY_DATA_DIR` and then
/// `./data` are used.
///
/// # Safety
/// `data_dir` must be NULL or a NUL-terminated string. `out` must be a
/// valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn imly_pipeline_open(data_dir: *const c_char, out: *mut *mut ImlyPipeline) -> ImlyStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(ImlyStatus::NullArgument, "out is NULL"));
        }
        *out = ptr::null_mut();
        let dir = opt_str(data_dir, "data_dir")?;
        let paths = ModelPaths { data_dir: dir.map(PathBuf::from), ..Default::default() };
        let models = Models::load(&paths).map_err(|e| fail(classify(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(ImlyPipeline { inner: Pipeline::new(models) }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `pipeline` must be NULL or a handle from [`imly_pipeline_open`] that
/// has not been freed and is not in use on another thread.
#[no_mangle]
pub unsafe extern "C" fn imly_pipeline_free(pipeline: *mut ImlyPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Imagines lyrics for a WAV file held in memory.
///
/// `config_text` holds `key = value` lines and may be NULL for defaults.
/// On success `*out_json` receives the result document, to be released
/// with [`imly_string_free`].
///
/// # Safety
/// `pipeline` must be a live handle, `wav` must point to `len` readable
/// bytes, `config_text` must be NULL or NUL-terminated, and `out_json`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn imly_imagine_wav(
    pipeline: *const ImlyPipeline,
    wav: *const u8,
    len: usize,
    config_text: *const c_char,
    out_json: *mut *mut c_char,
) -> ImlyStatus {
    guard(|| {
        if pipeline.is_null() || wav.is_null() || out_json.is_null() {
            return Err(fail(ImlyStatus::NullArgument, "pipeline, wav and out_json must not be NULL"));
        }
        *out_json = ptr::null_mut();
        let cfg = config_from(opt_str(config_text, "config_text")?)?;
        let bytes = std::slice::from_raw_parts(wav, len);
        let result = (*pipeline).inner.imagine_wav(bytes, &cfg).map_err(|e| fail(classify(&e), e.to_string()))?;
        hand_out(result.to_json(), out_json)
    })
}

/// Re-runs word decoding for audio imagined earlier on this handle.
///
/// Only decoder and channel settings may differ from the original run;
/// a change to the acoustic settings yields `IMLY_STATUS_CACHE_MISS`.
///
/// # Safety
/// As for [`imly_imagine_wav`]; `audio_sha256` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn imly_redecode(
    pipeline: *const ImlyPipeline,
    audio_sha256: *const c_char,
    config_text: *const c_char,
    out_json: *mut *mut c_char,
) -> ImlyStatus {
    guard(|| {
        if pipeline.is_null() || audio_sha256.is_null() || out_json.is_null() {
            return Err(fail(ImlyStatus::NullArgument, "pipeline, audio_sha256 and out_json must not be NULL"));
        }
        *out_json = ptr::null_mut();
        let sha = opt_str(audio_sha256, "audio_sha256")?.unwrap_or_default();
        let cfg = config_from(opt_str(config_text, "config_text")?)?;
        let result = (*pipeline).inner.redecode(sha, &cfg).map_err(|e| fail(classify(&e), e.to_string()))?;
        hand_out(result.to_json(), out_json)
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn imly_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the most recent failure on the calling thread, or NULL.
///
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn imly_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn imly_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
