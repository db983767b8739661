//! C interface to trackforge.
//!
//! Logs and results are opaque handles owned by the caller and released
//! with their `_free` function. Every entry point returns a [`TfStatus`];
//! on failure [`tf_last_error_message`] describes what went wrong on the
//! calling thread. Strings handed out by the library are released with
//! [`tf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trackforge::config::PipelineConfig;
use trackforge::featurize::{detect_turning_points, TurningConfig};
use trackforge::logio::{parse_log, write_chain_graphs, SensorLog};
use trackforge::pipeline::{load_model, run_logs, PipelineOutput};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Config = 5,
    Pipeline = 6,
    BufferTooSmall = 7,
    Io = 8,
    Panic = 9,
}

/// A parsed sensor log.
pub struct TfLog {
    log: SensorLog,
}

/// The outcome of one pipeline run over a set of logs.
pub struct TfResult {
    output: PipelineOutput,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TfLogCounts {
    pub accel: usize,
    pub gyro: usize,
    pub magn: usize,
    pub baro: usize,
    pub wifi: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TfSummary {
    pub logs: usize,
    pub steps: usize,
    pub segments: usize,
    pub floors: usize,
    pub graphs: usize,
    pub dropped: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

struct Failure(TfStatus, String);

fn fail<T>(status: TfStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, message.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TfStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let text = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal error: {text}"));
            TfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        fail(TfStatus::NullPointer, format!("{name} is null"))
    } else {
        Ok(())
    }
}

unsafe fn utf8<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(TfStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// Message for the last failed call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses `len` bytes of TSL text into a new log handle.
///
/// # Safety
/// `data` must point to `len` readable bytes, `source_id` to a
/// NUL-terminated string and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_log_parse(
    data: *const u8,
    len: usize,
    source_id: *const c_char,
    out: *mut *mut TfLog,
) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        if len > 0 {
            non_null(data, "data")?;
        }
        let id = utf8(source_id, "source_id")?;
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        let log = parse_log(bytes, id).or_else(|e| fail(TfStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(TfLog { log }));
        Ok(())
    })
}

/// Releases a log handle. Null is ignored.
///
/// # Safety
/// `log` must come from [`tf_log_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tf_log_free(log: *mut TfLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Sample counts per sensor stream.
///
/// # Safety
/// `log` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_log_counts(log: *const TfLog, out: *mut TfLogCounts) -> TfStatus {
    guard(|| {
        non_null(log, "log")?;
        non_null(out, "out")?;
        let l = &(*log).log;
        *out = TfLogCounts {
            accel: l.accel.len(),
            gyro: l.gyro.len(),
            magn: l.magn.len(),
            baro: l.baro.len(),
            wifi: l.wifi.len(),
        };
        Ok(())
    })
}

/// Runs the whole pipeline jointly over `count` logs. `config_toml` may be
/// null for the default configuration.
///
/// # Safety
/// `logs` must point to `count` live log handles, `config_toml` must be
/// null or NUL-terminated, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_pipeline_run(
    logs: *const *const TfLog,
    count: usize,
    config_toml: *const c_char,
    out: *mut *mut TfResult,
) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        if count == 0 {
            return fail(TfStatus::InvalidArgument, "no logs given");
        }
        non_null(logs, "logs")?;
        let handles = std::slice::from_raw_parts(logs, count);
        let mut owned = Vec::with_capacity(count);
        for (i, &h) in handles.iter().enumerate() {
            non_null(h, &format!("logs[{i}]"))?;
            owned.push((*h).log.clone());
        }
        let cfg = if config_toml.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::from_toml_str(utf8(config_toml, "config_toml")?)
                .or_else(|e| fail(TfStatus::Config, e.to_string()))?
        };
        let model = load_model(&cfg).or_else(|e| fail(TfStatus::Io, e.to_string()))?;
        let output = run_logs(&owned, &cfg, &model).or_else(|e| fail(TfStatus::Pipeline, e.to_string()))?;
        *out = Box::into_raw(Box::new(TfResult { output }));
        Ok(())
    })
}

/// Releases a result handle. Null is ignored.
///
/// # Safety
/// `result` must come from [`tf_pipeline_run`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tf_result_free(result: *mut TfResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Totals over every log of a result.
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_result_summary(result: *const TfResult, out: *mut TfSummary) -> TfStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        let o = &(*result).output;
        *out = TfSummary {
            logs: o.runs.len(),
            steps: o.runs.iter().map(|r| r.steps.len()).sum(),
            segments: o.runs.iter().map(|r| r.segments.len()).sum(),
            floors: o.assignment.floor_count(),
            graphs: o.graphs.iter().map(|g| g.graphs.len()).sum(),
            dropped: o.graphs.iter().map(|g| g.dropped).sum(),
        };
        Ok(())
    })
}

/// Chain-graph document of the `index`-th log as JSON. Release the string
/// with [`tf_string_free`].
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_result_graphs_json(
    result: *const TfResult,
    index: usize,
    out: *mut *mut c_char,
) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(result, "result")?;
        let o = &(*result).output;
        let (Some(run), Some(graphs)) = (o.runs.get(index), o.graphs.get(index)) else {
            return fail(
                TfStatus::InvalidArgument,
                format!("index {index} out of range for {} logs", o.runs.len()),
            );
        };
        let mut bytes = Vec::new();
        write_chain_graphs(&graphs.graphs, &run.source_id, &mut bytes)
            .or_else(|e| fail(TfStatus::Io, e.to_string()))?;
        // JSON text never contains NUL
        *out = CString::new(bytes).unwrap().into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Turning-point detection on a planar path of `count` points given as
/// interleaved `x, y` pairs. Writes up to `capacity` vertex indices and
/// always stores the full count in `out_len`; returns
/// `TF_STATUS_BUFFER_TOO_SMALL` when they do not fit.
///
/// # Safety
/// `xy` must point to `2 * count` doubles, `out_indices` to `capacity`
/// writable slots (may be null when `capacity` is 0) and `out_len` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tf_detect_turning_points(
    xy: *const f64,
    count: usize,
    epsilon: f64,
    window_min: usize,
    out_indices: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> TfStatus {
    guard(|| {
        non_null(out_len, "out_len")?;
        *out_len = 0;
        if count < 2 {
            return fail(TfStatus::InvalidArgument, "need at least two points");
        }
        non_null(xy, "xy")?;
        if !(epsilon > 0.0 && epsilon <= std::f64::consts::PI) || window_min == 0 {
            return fail(TfStatus::InvalidArgument, "epsilon must be in (0, pi] and window_min at least 1");
        }
        let flat = std::slice::from_raw_parts(xy, 2 * count);
        let points: Vec<[f64; 2]> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return fail(TfStatus::InvalidArgument, "coordinates must be finite");
        }
        let cfg = TurningConfig {
            epsilon,
            window_min,
            ..TurningConfig::default()
        };
        let v = detect_turning_points(&points, &cfg);
        *out_len = v.len();
        if v.len() > capacity {
            return fail(
                TfStatus::BufferTooSmall,
                format!("{} indices do not fit in {capacity}", v.len()),
            );
        }
        non_null(out_indices, "out_indices")?;
        std::slice::from_raw_parts_mut(out_indices, v.len()).copy_from_slice(&v);
        Ok(())
    })
}
