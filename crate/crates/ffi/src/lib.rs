//! C ABI for the `hdpmf` library.
//!
//! Objects are opaque handles created and destroyed by this library. Every
//! fallible function returns an [`HdpmfStatus`]; on failure the message is
//! available from [`hdpmf_last_error_message`] on the same thread. Panics
//! never cross the boundary: they are reported as `HDPMF_STATUS_PANIC`.
//!
//! The generated header is `include/hdpmf.h`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hdpmf::cli::{self, NoiseCheckParams};
use hdpmf::config::{parse_config, parse_config_str};
use hdpmf::data::{self, DatasetFormat};
use hdpmf::eval::{self, ExperimentResult};
use hdpmf::{privacy, Error, ExperimentConfig, Method, RatingDataset};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdpmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Parse = 4,
    Io = 5,
    Usage = 6,
    Diverged = 7,
    Protocol = 8,
    Invariant = 9,
    OutOfRange = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdpmfMethod {
    Mf = 0,
    Dpmf = 1,
    Pdpmf = 2,
    Hdpmf = 3,
    HdpmfR = 4,
}

impl From<Method> for HdpmfMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Mf => HdpmfMethod::Mf,
            Method::Dpmf => HdpmfMethod::Dpmf,
            Method::Pdpmf => HdpmfMethod::Pdpmf,
            Method::Hdpmf => HdpmfMethod::Hdpmf,
            Method::HdpmfR => HdpmfMethod::HdpmfR,
        }
    }
}

/// Aggregate over the successful seeds of one method.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdpmfSummary {
    pub method: HdpmfMethod,
    /// Successful seeds.
    pub n: usize,
    /// Configured seeds.
    pub seeds: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdpmfNoiseReport {
    pub scale: f64,
    pub mean: f64,
    pub variance: f64,
    pub expected_variance: f64,
    pub variance_rel_error: f64,
    pub ks: f64,
    pub passed: bool,
}

/// A loaded ratings file.
pub struct HdpmfDataset {
    inner: RatingDataset,
}

/// An experiment configuration.
pub struct HdpmfConfig {
    inner: ExperimentConfig,
}

/// Results of one experiment, one entry per method.
pub struct HdpmfResults {
    inner: Vec<ExperimentResult>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', "\\0")).expect("NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// The message of the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn hdpmf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

struct Failure(HdpmfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Usage(_) => HdpmfStatus::Usage,
            Error::Invariant(_) => HdpmfStatus::Invariant,
            Error::Parse { .. } => HdpmfStatus::Parse,
            Error::Config(_) => HdpmfStatus::Config,
            Error::Protocol(_) => HdpmfStatus::Protocol,
            Error::Diverged { .. } => HdpmfStatus::Diverged,
            Error::Io { .. } => HdpmfStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<hdpmf::config::ConfigError> for Failure {
    fn from(e: hdpmf::config::ConfigError) -> Self {
        Failure(HdpmfStatus::Config, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HdpmfStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HdpmfStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HdpmfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
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
            HdpmfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(HdpmfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Loads a ratings file. `format` is `ml100k`, `ml1m` or `csv` (1-5 scale).
/// On success `*out` owns a new dataset; free it with
/// [`hdpmf_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn hdpmf_dataset_load(
    path: *const c_char,
    format: *const c_char,
    out: *mut *mut HdpmfDataset,
) -> HdpmfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let format = str_arg(format, "format")?;
        let format = DatasetFormat::parse(format).ok_or_else(|| {
            Failure(HdpmfStatus::Usage, format!("unknown dataset format {format:?}"))
        })?;
        let scale = hdpmf::RatingScale::new(1.0, 5.0)?;
        let loaded = data::load(path, format, scale)?;
        *out = Box::into_raw(Box::new(HdpmfDataset {
            inner: loaded.dataset,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hdpmf_dataset_free(dataset: *mut HdpmfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Users, items and ratings of a dataset. Any output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_dataset_counts(
    dataset: *const HdpmfDataset,
    n_users: *mut usize,
    n_items: *mut usize,
    n_ratings: *mut usize,
) -> HdpmfStatus {
    guard(|| {
        let d = &ref_arg(dataset, "dataset")?.inner;
        for (p, v) in [(n_users, d.n_users()), (n_items, d.n_items()), (n_ratings, d.len())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// The default configuration.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_config_default(out: *mut *mut HdpmfConfig) -> HdpmfStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(HdpmfConfig {
            inner: ExperimentConfig::default(),
        }));
        Ok(())
    })
}

/// Parses `key = value` config text.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_config_parse(
    text: *const c_char,
    out: *mut *mut HdpmfConfig,
) -> HdpmfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = parse_config_str(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(HdpmfConfig { inner }));
        Ok(())
    })
}

/// Reads and parses a config file.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_config_load(
    path: *const c_char,
    out: *mut *mut HdpmfConfig,
) -> HdpmfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = parse_config(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(HdpmfConfig { inner }));
        Ok(())
    })
}

/// Sets one key with the same syntax as a config file line. The config is
/// unchanged if the result would be invalid.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_config_set(
    config: *mut HdpmfConfig,
    key: *const c_char,
    value: *const c_char,
) -> HdpmfStatus {
    guard(|| {
        let cfg = &mut out_arg(config, "config")?.inner;
        let mut next = cfg.clone();
        next.set(str_arg(key, "key")?, str_arg(value, "value")?)?;
        next.validate()?;
        *cfg = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hdpmf_config_free(config: *mut HdpmfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs every configured method over every seed on an already loaded
/// dataset. Does not write the results file.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_run_on(
    dataset: *const HdpmfDataset,
    config: *const HdpmfConfig,
    out: *mut *mut HdpmfResults,
) -> HdpmfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let d = &ref_arg(dataset, "dataset")?.inner;
        let cfg = &ref_arg(config, "config")?.inner;
        cfg.validate()?;
        let inner = cfg
            .methods
            .iter()
            .map(|&m| eval::run_experiment_on(d, cfg, m, &cfg.seeds))
            .collect::<hdpmf::Result<Vec<_>>>()?;
        *out = Box::into_raw(Box::new(HdpmfResults { inner }));
        Ok(())
    })
}

/// Loads the configured dataset, then behaves like [`hdpmf_run_on`].
#[no_mangle]
pub unsafe extern "C" fn hdpmf_run(
    config: *const HdpmfConfig,
    out: *mut *mut HdpmfResults,
) -> HdpmfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = &ref_arg(config, "config")?.inner;
        cfg.validate()?;
        let inner = eval::run_experiment(cfg, &cfg.seeds)?;
        *out = Box::into_raw(Box::new(HdpmfResults { inner }));
        Ok(())
    })
}

/// Number of methods in a result set; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_results_len(results: *const HdpmfResults) -> usize {
    results.as_ref().map_or(0, |r| r.inner.len())
}

/// Summary of method `index`. Fails with `HDPMF_STATUS_DIVERGED` if every
/// seed of that method failed.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_results_summary(
    results: *const HdpmfResults,
    index: usize,
    out: *mut HdpmfSummary,
) -> HdpmfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let results = &ref_arg(results, "results")?.inner;
        let r = results.get(index).ok_or_else(|| {
            Failure(
                HdpmfStatus::OutOfRange,
                format!("index {index} out of range ({} results)", results.len()),
            )
        })?;
        let s = r.summary.ok_or_else(|| {
            Failure(HdpmfStatus::Diverged, format!("every seed of {} failed", r.method))
        })?;
        *out = HdpmfSummary {
            method: r.method.into(),
            n: s.n,
            seeds: r.seeds.len(),
            mse_mean: s.mse_mean,
            mse_std: s.mse_std,
            mae_mean: s.mae_mean,
            mae_std: s.mae_std,
        };
        Ok(())
    })
}

/// Writes the results CSV (same format as the command-line tool).
#[no_mangle]
pub unsafe extern "C" fn hdpmf_results_write_csv(
    results: *const HdpmfResults,
    path: *const c_char,
) -> HdpmfStatus {
    guard(|| {
        let results = &ref_arg(results, "results")?.inner;
        let path = PathBuf::from(str_arg(path, "path")?);
        eval::emit_results(results, path)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hdpmf_results_free(results: *mut HdpmfResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// Per-coordinate Laplace scale `2 √K Δ / ε` of the item-gradient noise.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_laplace_scale(
    k: usize,
    delta: f64,
    epsilon: f64,
    out: *mut f64,
) -> HdpmfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if k == 0 || !(delta > 0.0) || !(epsilon > 0.0) {
            return Err(Failure(
                HdpmfStatus::Usage,
                "need K >= 1, delta > 0 and epsilon > 0".into(),
            ));
        }
        *out = privacy::laplace_scale(k, delta, epsilon);
        Ok(())
    })
}

/// `raw / weight`, clamped to `[scale_min, scale_max]` when `clamp` is set.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_rescale_prediction(
    raw: f64,
    weight: f64,
    scale_min: f64,
    scale_max: f64,
    clamp: bool,
    out: *mut f64,
) -> HdpmfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = privacy::rescale_prediction(raw, weight, scale_min, scale_max, clamp)?;
        Ok(())
    })
}

/// Monte-Carlo check of the distributed noise; see the `check-noise`
/// subcommand.
#[no_mangle]
pub unsafe extern "C" fn hdpmf_check_noise(
    k: usize,
    delta: f64,
    epsilon: f64,
    raters: usize,
    samples: usize,
    seed: u64,
    out: *mut HdpmfNoiseReport,
) -> HdpmfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = cli::cmd_check_noise(NoiseCheckParams {
            k,
            delta,
            epsilon,
            raters,
            samples,
            seed,
        })?;
        *out = HdpmfNoiseReport {
            scale: r.scale,
            mean: r.mean,
            variance: r.variance,
            expected_variance: r.expected_variance,
            variance_rel_error: r.variance_rel_error,
            ks: r.ks,
            passed: r.passed(),
        };
        Ok(())
    })
}
