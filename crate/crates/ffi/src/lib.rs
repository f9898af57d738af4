//! C ABI over the `mgtad` detector.
//!
//! Every fallible function returns an [`MgtadStatus`]; on failure the message
//! is available from [`mgtad_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use mgtad::data::Timing;
use mgtad::detection::Detection;
use mgtad::infer::{detect, InferConfig, StreamDetector};
use mgtad::model::Model;
use mgtad::{Error, Grid};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MgtadStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    InvalidModel = 4,
    ShapeMismatch = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// A detection as seen from C. Times are in seconds.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MgtadDetection {
    pub start_s: f64,
    pub end_s: f64,
    pub label: u32,
    pub score: f64,
}

impl From<&Detection> for MgtadDetection {
    fn from(d: &Detection) -> Self {
        Self {
            start_s: d.start_s,
            end_s: d.end_s,
            label: d.label as u32,
            score: d.score,
        }
    }
}

/// Inference parameters; obtain defaults from [`mgtad_infer_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MgtadInferConfig {
    pub score_threshold: f64,
    pub nms_sigma: f64,
    pub min_score: f64,
    pub report_threshold: f64,
    pub window: u32,
    pub fps: f64,
    pub feature_stride: u32,
}

impl MgtadInferConfig {
    fn split(&self) -> Result<(InferConfig, Timing), Error> {
        if !(self.fps > 0.0 && self.fps.is_finite()) || self.feature_stride == 0 {
            return Err(Error::Config("fps and feature_stride must be positive".into()));
        }
        let cfg = InferConfig {
            score_threshold: self.score_threshold,
            nms_sigma: self.nms_sigma,
            min_score: self.min_score,
            report_threshold: self.report_threshold,
            window: self.window as usize,
        };
        Ok((cfg, Timing::new(self.fps, self.feature_stride)))
    }
}

/// Opaque loaded model.
pub struct MgtadModel {
    model: Arc<Model>,
}

/// Opaque streaming session. Finalized detections queue up inside the
/// handle until drained.
pub struct MgtadStream {
    detector: Option<StreamDetector<Arc<Model>>>,
    queue: Vec<MgtadDetection>,
    channels: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> MgtadStatus {
    match e {
        Error::Io { .. } => MgtadStatus::Io,
        Error::ModelFormat { .. } | Error::Json(_) => MgtadStatus::InvalidModel,
        Error::Shape { .. } => MgtadStatus::ShapeMismatch,
        Error::Config(_) | Error::TooShort { .. } | Error::DegenerateInterval { .. } => MgtadStatus::InvalidArgument,
        _ => MgtadStatus::Internal,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), MgtadStatus>) -> MgtadStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgtadStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            MgtadStatus::Internal
        }
    }
}

fn fail(e: Error) -> MgtadStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> MgtadStatus {
    set_error(format!("{what} is null"));
    MgtadStatus::NullPointer
}

/// # Safety
/// `features` must point to `channels * steps` readable doubles unless
/// `steps` is zero.
unsafe fn grid_from(features: *const f64, channels: usize, steps: usize) -> Result<Grid, MgtadStatus> {
    if steps == 0 {
        return Ok(Grid::zeros(&[channels, 0]));
    }
    if features.is_null() {
        return Err(null("features"));
    }
    let n = channels.checked_mul(steps).ok_or_else(|| {
        set_error("feature size overflows");
        MgtadStatus::InvalidArgument
    })?;
    let data = std::slice::from_raw_parts(features, n).to_vec();
    Grid::from_vec(&[channels, steps], data).map_err(fail)
}

/// # Safety
/// `out` must point to `capacity` writable detections unless `capacity` is 0.
unsafe fn write_out(
    dets: &[MgtadDetection],
    out: *mut MgtadDetection,
    capacity: usize,
    out_count: *mut usize,
) -> Result<(), MgtadStatus> {
    *out_count = dets.len();
    if dets.len() > capacity {
        set_error(format!("{} detections do not fit in {capacity}", dets.len()));
        return Err(MgtadStatus::BufferTooSmall);
    }
    if !dets.is_empty() {
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(dets.as_ptr(), out, dets.len());
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mgtad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn mgtad_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn mgtad_status_string(status: MgtadStatus) -> *const c_char {
    let s: &'static str = match status {
        MgtadStatus::Ok => "ok\0",
        MgtadStatus::NullPointer => "null pointer\0",
        MgtadStatus::InvalidArgument => "invalid argument\0",
        MgtadStatus::Io => "i/o error\0",
        MgtadStatus::InvalidModel => "invalid model file\0",
        MgtadStatus::ShapeMismatch => "shape mismatch\0",
        MgtadStatus::BufferTooSmall => "buffer too small\0",
        MgtadStatus::Internal => "internal error\0",
    };
    s.as_ptr().cast()
}

/// Default inference parameters for features at `fps` frames per second and
/// `feature_stride` frames per step.
#[no_mangle]
pub extern "C" fn mgtad_infer_config_default(fps: f64, feature_stride: u32) -> MgtadInferConfig {
    let d = InferConfig::default();
    MgtadInferConfig {
        score_threshold: d.score_threshold,
        nms_sigma: d.nms_sigma,
        min_score: d.min_score,
        report_threshold: d.report_threshold,
        window: d.window as u32,
        fps,
        feature_stride,
    }
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mgtad_model_load(path: *const c_char, out: *mut *mut MgtadModel) -> MgtadStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path).to_str().map_err(|_| {
            set_error("path is not UTF-8");
            MgtadStatus::InvalidArgument
        })?;
        let model = Model::load(path).map_err(fail)?;
        *out = Box::into_raw(Box::new(MgtadModel { model: Arc::new(model) }));
        Ok(())
    })
}

/// Loads a model from an in-memory model file.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn mgtad_model_load_bytes(bytes: *const u8, len: usize, out: *mut *mut MgtadModel) -> MgtadStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = Model::from_bytes(std::slice::from_raw_parts(bytes, len)).map_err(fail)?;
        *out = Box::into_raw(Box::new(MgtadModel { model: Arc::new(model) }));
        Ok(())
    })
}

/// Releases a model. Streams created from it stay valid. Null is ignored.
///
/// # Safety
/// `model` must come from a load function and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mgtad_model_free(model: *mut MgtadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature channels the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgtad_model_input_channels(model: *const MgtadModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.input_channels)
}

/// Number of categories, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgtad_model_num_classes(model: *const MgtadModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.num_classes())
}

/// Offline detection over a channel-major `channels × steps` feature block.
///
/// `*out_count` always receives the number of detections. When it exceeds
/// `capacity` nothing is written and `MGTAD_STATUS_BUFFER_TOO_SMALL` is
/// returned, so callers can retry with a larger buffer.
///
/// # Safety
/// Pointers must be valid for the stated sizes; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgtad_detect(
    model: *const MgtadModel,
    features: *const f64,
    channels: usize,
    steps: usize,
    config: *const MgtadInferConfig,
    out: *mut MgtadDetection,
    capacity: usize,
    out_count: *mut usize,
) -> MgtadStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if out_count.is_null() {
            return Err(null("out_count"));
        }
        *out_count = 0;
        let (cfg, timing) = config.split().map_err(fail)?;
        let grid = grid_from(features, channels, steps)?;
        let dets: Vec<MgtadDetection> = detect(&model.model, &grid, &timing, &cfg)
            .map_err(fail)?
            .iter()
            .map(Into::into)
            .collect();
        write_out(&dets, out, capacity, out_count)
    })
}

/// Starts a streaming session on `model`.
///
/// # Safety
/// `model` and `config` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgtad_stream_new(
    model: *const MgtadModel,
    config: *const MgtadInferConfig,
    out: *mut *mut MgtadStream,
) -> MgtadStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let (cfg, timing) = config.split().map_err(fail)?;
        let detector = StreamDetector::new(Arc::clone(&model.model), timing, cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(MgtadStream {
            detector: Some(detector),
            queue: Vec::new(),
            channels: model.model.config.input_channels,
        }));
        Ok(())
    })
}

/// Appends `steps` feature steps (channel-major, `channels × steps`) and
/// queues any detections that became final.
///
/// # Safety
/// `stream` must be live and `features` hold `channels * steps` doubles.
#[no_mangle]
pub unsafe extern "C" fn mgtad_stream_push(
    stream: *mut MgtadStream,
    features: *const f64,
    channels: usize,
    steps: usize,
) -> MgtadStatus {
    guard(|| {
        let s = stream.as_mut().ok_or_else(|| null("stream"))?;
        if channels != s.channels {
            return Err(fail(Error::Shape {
                axis: "feature channels",
                expected: s.channels,
                actual: channels,
            }));
        }
        let det = s.detector.as_mut().ok_or_else(|| {
            set_error("stream already finished");
            MgtadStatus::InvalidArgument
        })?;
        let grid = grid_from(features, channels, steps)?;
        let ready = det.push(&grid).map_err(fail)?;
        s.queue.extend(ready.iter().map(MgtadDetection::from));
        Ok(())
    })
}

/// Ends the sequence and queues the remaining detections. Further pushes
/// fail; draining keeps working.
///
/// # Safety
/// `stream` must be live.
#[no_mangle]
pub unsafe extern "C" fn mgtad_stream_finish(stream: *mut MgtadStream) -> MgtadStatus {
    guard(|| {
        let s = stream.as_mut().ok_or_else(|| null("stream"))?;
        if let Some(det) = s.detector.take() {
            let ready = det.finish().map_err(fail)?;
            s.queue.extend(ready.iter().map(MgtadDetection::from));
        }
        Ok(())
    })
}

/// Number of queued detections, or 0 for a null handle.
///
/// # Safety
/// `stream` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn mgtad_stream_pending(stream: *const MgtadStream) -> usize {
    stream.as_ref().map_or(0, |s| s.queue.len())
}

/// Moves up to `capacity` queued detections into `out`, oldest first, and
/// stores how many were written in `*out_count`.
///
/// # Safety
/// `out` must hold `capacity` detections; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mgtad_stream_drain(
    stream: *mut MgtadStream,
    out: *mut MgtadDetection,
    capacity: usize,
    out_count: *mut usize,
) -> MgtadStatus {
    guard(|| {
        let s = stream.as_mut().ok_or_else(|| null("stream"))?;
        if out_count.is_null() {
            return Err(null("out_count"));
        }
        let n = capacity.min(s.queue.len());
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        let batch: Vec<MgtadDetection> = s.queue.drain(..n).collect();
        write_out(&batch, out, capacity, out_count)
    })
}

/// Releases a stream. Null is ignored.
///
/// # Safety
/// `stream` must come from [`mgtad_stream_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mgtad_stream_free(stream: *mut MgtadStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}
