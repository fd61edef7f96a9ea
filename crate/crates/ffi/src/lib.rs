//! C ABI for running kband experiments.
//!
//! Handles are opaque pointers created and released by this library. Every
//! fallible call returns a [`KbandStatus`]; on failure a description is kept
//! per thread and can be read with [`kband_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kband::harness::{run_experiment, ExperimentConfig, ExperimentResult};

/// Result of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KbandStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// The configuration was rejected.
    Config = 3,
    /// At least one seed failed; results for the other seeds are still
    /// returned.
    Replication = 4,
    BufferTooSmall = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

/// A parsed, validated experiment configuration.
pub struct KbandExperiment {
    config: ExperimentConfig,
}

/// Results of running an experiment.
pub struct KbandResults {
    result: ExperimentResult,
}

/// Cross-seed statistics (mean and sample standard deviation).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KbandSummary {
    pub succeeded: u64,
    pub failed: u64,
    pub horizon: u64,
    pub final_regret_mean: f64,
    pub final_regret_std: f64,
    pub total_cost_mean: f64,
    pub total_cost_std: f64,
    pub wall_clock_mean: f64,
    pub wall_clock_std: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: KbandStatus, msg: impl Into<String>) -> KbandStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> KbandStatus) -> KbandStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(KbandStatus::Panic, msg)
        }
    }
}

/// Parses and validates a JSON configuration. Relative paths inside it
/// resolve against the working directory.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kband_experiment_from_json(json: *const c_char, out: *mut *mut KbandExperiment) -> KbandStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(KbandStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(KbandStatus::InvalidUtf8, "configuration is not valid UTF-8");
        };
        match ExperimentConfig::from_json_str(text) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(KbandExperiment { config }));
                KbandStatus::Ok
            }
            Err(e) => fail(KbandStatus::Config, e.to_string()),
        }
    })
}

/// Releases an experiment; null is ignored.
///
/// # Safety
/// `exp` must come from [`kband_experiment_from_json`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn kband_experiment_free(exp: *mut KbandExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Runs every seed. On [`KbandStatus::Replication`] `*out` is still set.
///
/// # Safety
/// `exp` must be a live experiment and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kband_experiment_run(exp: *const KbandExperiment, out: *mut *mut KbandResults) -> KbandStatus {
    guard(|| {
        if exp.is_null() || out.is_null() {
            return fail(KbandStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        match run_experiment(&(*exp).config) {
            Ok(result) => {
                let failed = result.aggregate.failed.clone();
                *out = Box::into_raw(Box::new(KbandResults { result }));
                if failed.is_empty() {
                    KbandStatus::Ok
                } else {
                    let list: Vec<String> = failed.iter().map(|f| format!("seed {}: {}", f.seed, f.error)).collect();
                    fail(KbandStatus::Replication, list.join("; "))
                }
            }
            Err(e) if e.is_config_error() => fail(KbandStatus::Config, e.to_string()),
            Err(e) => fail(KbandStatus::Replication, e.to_string()),
        }
    })
}

/// Releases results; null is ignored.
///
/// # Safety
/// `res` must come from [`kband_experiment_run`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn kband_results_free(res: *mut KbandResults) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Number of replications, successful or not; 0 for null.
///
/// # Safety
/// `res` must be null or a live result.
#[no_mangle]
pub unsafe extern "C" fn kband_results_replications(res: *const KbandResults) -> usize {
    if res.is_null() {
        0
    } else {
        (*res).result.replications.len()
    }
}

/// # Safety
/// `res` must be a live result and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kband_results_summary(res: *const KbandResults, out: *mut KbandSummary) -> KbandStatus {
    guard(|| {
        if res.is_null() || out.is_null() {
            return fail(KbandStatus::NullPointer, "null argument");
        }
        let a = &(*res).result.aggregate;
        *out = KbandSummary {
            succeeded: a.seeds.len() as u64,
            failed: a.failed.len() as u64,
            horizon: a.cum_regret.len() as u64,
            final_regret_mean: a.final_regret.mean,
            final_regret_std: a.final_regret.std,
            total_cost_mean: a.total_cost.mean,
            total_cost_std: a.total_cost.std,
            wall_clock_mean: a.wall_clock_secs.mean,
            wall_clock_std: a.wall_clock_secs.std,
        };
        KbandStatus::Ok
    })
}

/// Copies the cross-seed mean cumulative regret per round into `buf`.
/// `*needed` always receives the number of rounds; if `len` is smaller,
/// nothing is copied and [`KbandStatus::BufferTooSmall`] is returned.
///
/// # Safety
/// `res` must be a live result, `needed` valid, and `buf` valid for `len`
/// doubles (it may be null when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn kband_results_cumulative_regret(
    res: *const KbandResults,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> KbandStatus {
    guard(|| {
        if res.is_null() || needed.is_null() {
            return fail(KbandStatus::NullPointer, "null argument");
        }
        let curve = &(*res).result.aggregate.cum_regret;
        *needed = curve.len();
        if len < curve.len() {
            return fail(KbandStatus::BufferTooSmall, format!("need {} values", curve.len()));
        }
        if curve.is_empty() {
            return KbandStatus::Ok;
        }
        if buf.is_null() {
            return fail(KbandStatus::NullPointer, "null buffer");
        }
        for (i, s) in curve.iter().enumerate() {
            *buf.add(i) = s.mean;
        }
        KbandStatus::Ok
    })
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to fit, into `buf`. Returns the full message length including
/// the terminator, or 0 when there is no message.
///
/// # Safety
/// `buf` must be valid for `len` bytes (it may be null when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn kband_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = (bytes.len() - 1).min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}
