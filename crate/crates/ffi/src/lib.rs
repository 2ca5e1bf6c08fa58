//! C ABI over `sqa-core`.
//!
//! Every fallible call returns an [`SqaStatus`]; on failure the message is
//! available from [`sqa_last_error_message`] on the same thread. Objects are
//! opaque handles released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sqa_core::data::{convert_iub, Corpus, SampleRecord};
use sqa_core::features::{extract_mfcc, read_embedding, resample, FeatureSequence, Waveform, SAMPLE_RATE};
use sqa_core::metrics::{dequantize_human_rmse, human_rmse};
use sqa_core::model::{load_checkpoint, Predictor};
use sqa_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    NonFinite = 6,
    Unavailable = 7,
    Empty = 8,
    Panic = 99,
}

impl From<&Error> for SqaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => SqaStatus::Io,
            Error::Format(_) | Error::Parse { .. } => SqaStatus::Format,
            Error::Shape(_) => SqaStatus::Shape,
            Error::NonFinite { .. } => SqaStatus::NonFinite,
            Error::Unavailable(_) => SqaStatus::Unavailable,
            Error::Empty(_) => SqaStatus::Empty,
            Error::Validation(_) | Error::Config(_) => SqaStatus::InvalidArgument,
        }
    }
}

/// A loaded predictor checkpoint.
pub struct SqaModel {
    inner: Predictor,
}

/// A T×D feature matrix (MFCC or one encoder layer).
pub struct SqaFeatures {
    inner: FeatureSequence,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: SqaStatus, msg: impl Into<String>) -> SqaStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard<F>(f: F) -> SqaStatus
where
    F: FnOnce() -> Result<(), SqaStatus>,
{
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SqaStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(SqaStatus::Panic, "internal panic"),
    }
}

fn core<T>(r: sqa_core::Result<T>) -> Result<T, SqaStatus> {
    r.map_err(|e| fail(SqaStatus::from(&e), format!("{}: {e}", e.category())))
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), SqaStatus> {
    if p.is_null() {
        Err(fail(SqaStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, SqaStatus> {
    nonnull(p, "path")?;
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(SqaStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], SqaStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    nonnull(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn sqa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sqa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sqa_model_load(path: *const c_char, out: *mut *mut SqaModel) -> SqaStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = std::ptr::null_mut();
        let model = core(load_checkpoint(path_arg(path)?))?;
        *out = Box::into_raw(Box::new(SqaModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`sqa_model_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sqa_model_free(model: *mut SqaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Expected feature dimension and number of input streams (2 with fusion).
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqa_model_input_shape(
    model: *const SqaModel,
    feature_dim: *mut usize,
    num_streams: *mut usize,
) -> SqaStatus {
    guard(|| {
        nonnull(model, "model")?;
        nonnull(feature_dim, "feature_dim")?;
        nonnull(num_streams, "num_streams")?;
        let cfg = &(*model).inner.config;
        *feature_dim = cfg.input_dim;
        *num_streams = cfg.streams();
        Ok(())
    })
}

/// Predict the MOS (1..5) of one utterance from its feature stream(s).
///
/// # Safety
/// `streams` must point to `num_streams` live feature handles; `mos` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqa_model_predict(
    model: *const SqaModel,
    streams: *const *const SqaFeatures,
    num_streams: usize,
    mos: *mut f64,
) -> SqaStatus {
    guard(|| {
        nonnull(model, "model")?;
        nonnull(mos, "mos")?;
        let handles = slice_arg(streams, num_streams, "streams")?;
        let mut seqs = Vec::with_capacity(handles.len());
        for &h in handles {
            nonnull(h, "feature handle")?;
            seqs.push((*h).inner.clone());
        }
        let p = core((*model).inner.predict_one(&seqs))?;
        *mos = p.mos;
        Ok(())
    })
}

/// Wrap a row-major T×D float matrix as features for `layer`
/// (`0xFFFFFFFF` marks MFCCs).
///
/// # Safety
/// `frames` must hold `num_frames * feature_dim` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqa_features_from_frames(
    frames: *const f32,
    num_frames: usize,
    feature_dim: usize,
    layer: u32,
    out: *mut *mut SqaFeatures,
) -> SqaStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = std::ptr::null_mut();
        let n = num_frames
            .checked_mul(feature_dim)
            .ok_or_else(|| fail(SqaStatus::InvalidArgument, "shape overflows"))?;
        let data = slice_arg(frames, n, "frames")?.to_vec();
        let seq = core(FeatureSequence::embedding(data, num_frames, feature_dim, layer))?;
        *out = Box::into_raw(Box::new(SqaFeatures { inner: seq }));
        Ok(())
    })
}

/// Read an SQAF feature file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sqa_features_read(path: *const c_char, out: *mut *mut SqaFeatures) -> SqaStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = std::ptr::null_mut();
        let seq = core(read_embedding(path_arg(path)?))?;
        *out = Box::into_raw(Box::new(SqaFeatures { inner: seq }));
        Ok(())
    })
}

/// 40-dimensional MFCCs of mono audio in [-1, 1]; resampled to 16 kHz first
/// when `sample_rate` differs.
///
/// # Safety
/// `samples` must hold `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqa_features_extract_mfcc(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut *mut SqaFeatures,
) -> SqaStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = std::ptr::null_mut();
        let audio: Vec<f64> = slice_arg(samples, len, "samples")?.iter().map(|&v| v as f64).collect();
        let mut w = core(Waveform::new(audio, sample_rate))?;
        if sample_rate != SAMPLE_RATE {
            w = core(resample(&w, SAMPLE_RATE))?;
        }
        let seq = core(extract_mfcc(&w))?;
        *out = Box::into_raw(Box::new(SqaFeatures { inner: seq }));
        Ok(())
    })
}

/// # Safety
/// `features` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqa_features_shape(
    features: *const SqaFeatures,
    num_frames: *mut usize,
    feature_dim: *mut usize,
) -> SqaStatus {
    guard(|| {
        nonnull(features, "features")?;
        nonnull(num_frames, "num_frames")?;
        nonnull(feature_dim, "feature_dim")?;
        *num_frames = (*features).inner.num_frames();
        *feature_dim = (*features).inner.feature_dim();
        Ok(())
    })
}

/// Copy the row-major frames into `buf`, which must have room for T×D floats.
///
/// # Safety
/// `buf` must be writable for `buf_len` floats.
#[no_mangle]
pub unsafe extern "C" fn sqa_features_copy(features: *const SqaFeatures, buf: *mut f32, buf_len: usize) -> SqaStatus {
    guard(|| {
        nonnull(features, "features")?;
        let frames = (*features).inner.frames();
        if buf_len < frames.len() {
            return Err(fail(
                SqaStatus::InvalidArgument,
                format!("buffer holds {buf_len} values, need {}", frames.len()),
            ));
        }
        nonnull(buf, "buf")?;
        std::ptr::copy_nonoverlapping(frames.as_ptr(), buf, frames.len());
        Ok(())
    })
}

/// # Safety
/// `features` must come from an `sqa_features_*` constructor and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sqa_features_free(features: *mut SqaFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Pooled single-vote RMSE from per-sample vote counts and standard
/// deviations (N−1 normalization). `quant_step` > 0 also fills
/// `dequantized`; pass 0 to skip it.
///
/// # Safety
/// `counts` and `stds` must hold `n` values; `rmse` must be writable,
/// `dequantized` may be null.
#[no_mangle]
pub unsafe extern "C" fn sqa_human_rmse(
    counts: *const u32,
    stds: *const f64,
    n: usize,
    quant_step: f64,
    rmse: *mut f64,
    dequantized: *mut f64,
) -> SqaStatus {
    guard(|| {
        nonnull(rmse, "rmse")?;
        let counts = slice_arg(counts, n, "counts")?;
        let stds = slice_arg(stds, n, "stds")?;
        let records: Vec<SampleRecord> = counts
            .iter()
            .zip(stds)
            .enumerate()
            .map(|(i, (&c, &s))| SampleRecord::new(i.to_string(), Corpus::Pstn, 3.0).with_votes(c, s))
            .collect();
        let agreement = core(human_rmse(&records))?;
        *rmse = agreement.rmse_human;
        if quant_step > 0.0 && !dequantized.is_null() {
            *dequantized = core(dequantize_human_rmse(agreement.rmse_human, quant_step))?;
        }
        Ok(())
    })
}

/// Remove uniform vote-quantization noise of step `quant_step` from an RMSE.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqa_dequantize_human_rmse(rmse: f64, quant_step: f64, out: *mut f64) -> SqaStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = core(dequantize_human_rmse(rmse, quant_step))?;
        Ok(())
    })
}

/// Map a raw 0..100 IUB rating onto the 1..5 MOS scale.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqa_convert_iub(raw: f64, out: *mut f64) -> SqaStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = core(convert_iub(raw))?;
        Ok(())
    })
}
