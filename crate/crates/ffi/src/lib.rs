//! C interface for loading a trained model and running tagging and event
//! detection on raw PCM.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free` function. Every fallible call returns a [`DcStatus`]
//! and leaves a message for [`dc_last_error`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use densecam::cam::{ClassThreshold, ThresholdSet};
use densecam::corpus::{load_weights, CorpusError, WeightsFile};
use densecam::densenet::DenseNet;
use densecam::features::{AudioClip, DEFAULT_MAX_DURATION_S};
use densecam::pipeline::{featurize, infer, predict_clip, ClipInference};
use densecam::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    /// Audio shorter than the model's minimum input, or too long.
    InputLength = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Per-class decoding thresholds. `median_len` must be odd.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DcThreshold {
    pub utterance: f32,
    pub frame: f32,
    pub median_len: u32,
}

/// A detected event in seconds from the start of the clip.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DcEvent {
    pub class_id: u32,
    pub onset: f64,
    pub offset: f64,
}

pub struct DcModel {
    file: WeightsFile,
    model: DenseNet,
    names: Vec<CString>,
}

/// Inference output for one clip.
pub struct DcClip {
    inference: ClipInference,
    duration_s: f64,
    time_resolution_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul removed"));
}

fn fail(status: DcStatus, msg: impl Into<String>) -> DcStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> DcStatus {
    use densecam::densenet::ModelError;
    use densecam::features::FeatureError;
    match e {
        Error::Corpus(CorpusError::Io { .. }) => DcStatus::Io,
        Error::Corpus(_) => DcStatus::Format,
        Error::Model(ModelError::InputTooShort { .. }) => DcStatus::InputLength,
        Error::Feature(FeatureError::ClipTooShort { .. }) => DcStatus::InputLength,
        Error::Feature(_) => DcStatus::InvalidArgument,
        Error::Cam(_) | Error::Invalid(_) | Error::Config(_) => DcStatus::InvalidArgument,
        _ => DcStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (DcStatus, String)>) -> DcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(DcStatus::Internal, "internal panic"),
    }
}

fn from_err(e: impl Into<Error>) -> (DcStatus, String) {
    let e = e.into();
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DcStatus, String) {
    (DcStatus::NullPointer, format!("`{what}` is null"))
}

fn load(file: WeightsFile) -> Result<Box<DcModel>, (DcStatus, String)> {
    let model = file.model().map_err(from_err)?;
    let names = file
        .vocab
        .names()
        .iter()
        .map(|n| {
            CString::new(n.as_str())
                .map_err(|_| (DcStatus::Format, "class name contains NUL".to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok(Box::new(DcModel { file, model, names }))
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a weights file written by `densecam train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_model_load(path: *const c_char, out: *mut *mut DcModel) -> DcStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (DcStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let file = load_weights(Path::new(path)).map_err(from_err)?;
        *out = Box::into_raw(load(file)?);
        Ok(())
    })
}

/// Loads a model from an in-memory weights file.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dc_model_load_bytes(
    bytes: *const u8,
    len: usize,
    out: *mut *mut DcModel,
) -> DcStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let file =
            WeightsFile::from_bytes(std::slice::from_raw_parts(bytes, len)).map_err(from_err)?;
        *out = Box::into_raw(load(file)?);
        Ok(())
    })
}

/// # Safety
/// `model` must come from `dc_model_load*` and not be freed twice. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn dc_model_free(model: *mut DcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes, or 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_model_num_classes(model: *const DcModel) -> usize {
    model.as_ref().map_or(0, |m| m.names.len())
}

/// Class name owned by the model, or null for a bad index.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_model_class_name(
    model: *const DcModel,
    class_id: usize,
) -> *const c_char {
    match model.as_ref().and_then(|m| m.names.get(class_id)) {
        Some(n) => n.as_ptr(),
        None => ptr::null(),
    }
}

/// Shortest accepted input in feature frames.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_model_min_frames(model: *const DcModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.model.spec.min_input_frames())
}

/// Extracts features from mono PCM in `[-1, 1]` and runs the model.
///
/// # Safety
/// `samples` must point to `n_samples` floats; `model` and `out` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn dc_model_run(
    model: *const DcModel,
    samples: *const f32,
    n_samples: usize,
    sample_rate: u32,
    out: *mut *mut DcClip,
) -> DcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if samples.is_null() {
            return Err(null("samples"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let pcm = std::slice::from_raw_parts(samples, n_samples).to_vec();
        let audio = AudioClip::new(pcm, sample_rate).map_err(from_err)?;
        if audio.duration_s() > DEFAULT_MAX_DURATION_S {
            return Err((
                DcStatus::InputLength,
                format!(
                    "clip is {:.2} s, limit is {DEFAULT_MAX_DURATION_S} s",
                    audio.duration_s()
                ),
            ));
        }
        let spec = featurize(&audio, &m.file.features).map_err(from_err)?;
        let mut inf = infer(&m.model, &[&spec], 1).map_err(from_err)?;
        let clip = DcClip {
            inference: inf.pop().expect("one clip"),
            duration_s: audio.duration_s(),
            time_resolution_s: m.model.time_resolution_s(spec.frame_shift_s),
        };
        *out = Box::into_raw(Box::new(clip));
        Ok(())
    })
}

/// # Safety
/// `clip` must come from `dc_model_run` and not be freed twice. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn dc_clip_free(clip: *mut DcClip) {
    if !clip.is_null() {
        drop(Box::from_raw(clip));
    }
}

/// Number of output frames in each CAM sequence.
///
/// # Safety
/// `clip` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_clip_num_frames(clip: *const DcClip) -> usize {
    clip.as_ref()
        .and_then(|c| c.inference.sequences.first())
        .map_or(0, Vec::len)
}

/// Seconds covered by one CAM frame.
///
/// # Safety
/// `clip` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_clip_time_resolution(clip: *const DcClip) -> f64 {
    clip.as_ref().map_or(0.0, |c| c.time_resolution_s)
}

/// Copies the clip-level class probabilities into `out`.
///
/// # Safety
/// `out` must have room for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn dc_clip_probs(clip: *const DcClip, out: *mut f32, cap: usize) -> DcStatus {
    guard(|| {
        let c = clip.as_ref().ok_or_else(|| null("clip"))?;
        copy_out(&c.inference.probs, out, cap)
    })
}

/// Copies the CAM sequence of `class_id` (score space, one value per
/// output frame) into `out`.
///
/// # Safety
/// `out` must have room for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn dc_clip_sequence(
    clip: *const DcClip,
    class_id: usize,
    out: *mut f32,
    cap: usize,
) -> DcStatus {
    guard(|| {
        let c = clip.as_ref().ok_or_else(|| null("clip"))?;
        let seq = c.inference.sequences.get(class_id).ok_or_else(|| {
            (
                DcStatus::InvalidArgument,
                format!(
                    "class {class_id} out of range for {} classes",
                    c.inference.sequences.len()
                ),
            )
        })?;
        copy_out(seq, out, cap)
    })
}

/// Decodes events with one threshold per class. Writes at most `cap` events
/// sorted by onset and stores the total in `n_events`; if that exceeds `cap`
/// the call returns `BufferTooSmall` and nothing is written.
///
/// # Safety
/// `thresholds` must hold `n_thresholds` entries and `out` room for `cap`
/// events (`out` may be null when `cap` is 0).
#[no_mangle]
pub unsafe extern "C" fn dc_clip_events(
    clip: *const DcClip,
    thresholds: *const DcThreshold,
    n_thresholds: usize,
    out: *mut DcEvent,
    cap: usize,
    n_events: *mut usize,
) -> DcStatus {
    guard(|| {
        let c = clip.as_ref().ok_or_else(|| null("clip"))?;
        if thresholds.is_null() {
            return Err(null("thresholds"));
        }
        if n_events.is_null() {
            return Err(null("n_events"));
        }
        let set = ThresholdSet {
            classes: std::slice::from_raw_parts(thresholds, n_thresholds)
                .iter()
                .map(|t| ClassThreshold {
                    utterance: t.utterance,
                    frame: t.frame,
                    median_len: t.median_len as usize,
                })
                .collect(),
        };
        let pred = predict_clip(&c.inference, &set, c.time_resolution_s, c.duration_s)
            .map_err(from_err)?;
        *n_events = pred.events.len();
        let events: Vec<DcEvent> = pred
            .events
            .iter()
            .map(|e| DcEvent {
                class_id: e.class as u32,
                onset: e.onset,
                offset: e.offset,
            })
            .collect();
        copy_out(&events, out, cap)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, cap: usize) -> Result<(), (DcStatus, String)> {
    if src.len() > cap {
        return Err((
            DcStatus::BufferTooSmall,
            format!("need room for {} values, got {cap}", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}
