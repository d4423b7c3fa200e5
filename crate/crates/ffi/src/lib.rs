//! C interface to roadlab.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! call returns a [`RoadlabStatus`]; on failure the message is available from
//! [`roadlab_last_error_message`] on the same thread. Panics are caught and
//! reported as `ROADLAB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use roadlab::eval::{evaluate, sign_test, sign_test_one_sided, MetricsReport};
use roadlab::experiment::pipeline::{eval_config, generate_splits, StageSeeds};
use roadlab::experiment::{run_pipeline, ExperimentConfig, PipelineOptions, PipelineOutput};
use roadlab::policy::checkpoint::CheckpointRecord;
use roadlab::policy::model::Policy;
use roadlab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoadlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Config = 4,
    Io = 5,
    Parse = 6,
    Numerical = 7,
    Mismatch = 8,
    Panic = 9,
}

/// Summary metrics of one evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoadlabMetrics {
    /// Kilometers driven per incident.
    pub driving_score: f64,
    pub collision_rate: f64,
    pub offroad_rate: f64,
    pub incident_rate: f64,
    pub mean_distance_m: f64,
    pub min_ade_m: f64,
    pub std_driving_score: f64,
    pub scenes: usize,
    pub evaluated: usize,
    pub excluded: usize,
    pub failed: usize,
}

impl From<&MetricsReport> for RoadlabMetrics {
    fn from(m: &MetricsReport) -> Self {
        Self {
            driving_score: m.driving_score,
            collision_rate: m.collision_rate,
            offroad_rate: m.offroad_rate,
            incident_rate: m.incident_rate,
            mean_distance_m: m.mean_distance_m,
            min_ade_m: m.min_ade_m,
            std_driving_score: m.std_driving_score,
            scenes: m.scenes,
            evaluated: m.evaluated,
            excluded: m.excluded,
            failed: m.failed,
        }
    }
}

/// Experiment configuration.
pub struct RoadlabConfig(ExperimentConfig);

/// A finished (or partially finished) pipeline run.
pub struct RoadlabRun(PipelineOutput);

/// A policy loaded from a checkpoint.
pub struct RoadlabPolicy(Policy);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RoadlabStatus {
    match e {
        Error::Config(_) => RoadlabStatus::Config,
        Error::Io(_) => RoadlabStatus::Io,
        Error::Parse { .. } | Error::Json(_) => RoadlabStatus::Parse,
        Error::Numerical(_) => RoadlabStatus::Numerical,
        Error::Mismatch(_) => RoadlabStatus::Mismatch,
        Error::AtStep { source, .. } => status_of(source),
        _ => RoadlabStatus::InvalidInput,
    }
}

struct Fail(RoadlabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RoadlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RoadlabStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
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
            RoadlabStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(RoadlabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(RoadlabStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn c_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn roadlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next roadlab call on this thread.
#[no_mangle]
pub extern "C" fn roadlab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn roadlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn roadlab_config_default(out: *mut *mut RoadlabConfig) -> RoadlabStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(RoadlabConfig(ExperimentConfig::default())));
        Ok(())
    })
}

/// Parses a TOML document. Missing keys take their defaults; unknown keys fail.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn roadlab_config_from_toml(text: *const c_char, out: *mut *mut RoadlabConfig) -> RoadlabStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        let cfg = ExperimentConfig::from_toml(str_arg(text, "text")?)?;
        *slot = Box::into_raw(Box::new(RoadlabConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn roadlab_config_load(path: *const c_char, out: *mut *mut RoadlabConfig) -> RoadlabStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        let cfg = ExperimentConfig::load(&PathBuf::from(str_arg(path, "path")?))?;
        *slot = Box::into_raw(Box::new(RoadlabConfig(cfg)));
        Ok(())
    })
}

/// Sets a dotted key such as `rollout.k` to a TOML value such as `16`.
/// The config is left unchanged on failure.
///
/// # Safety
/// `cfg` must be a live config handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn roadlab_config_set(cfg: *mut RoadlabConfig, key: *const c_char, value: *const c_char) -> RoadlabStatus {
    guard(|| {
        let cfg = out_arg(cfg, "cfg")?;
        let key = str_arg(key, "key")?;
        let raw = str_arg(value, "value")?;
        let doc: toml::Table = toml::from_str(&format!("v = {raw}"))
            .map_err(|e| Fail(RoadlabStatus::Config, format!("value for {key}: {}", e.message())))?;
        cfg.0 = cfg.0.with_override(key, &doc["v"])?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn roadlab_config_validate(cfg: *const RoadlabConfig) -> RoadlabStatus {
    guard(|| Ok(ref_arg(cfg, "cfg")?.0.validate()?))
}

/// Writes the config as TOML into a new string freed with `roadlab_string_free`.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roadlab_config_to_toml(cfg: *const RoadlabConfig, out: *mut *mut c_char) -> RoadlabStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        *slot = c_string(&ref_arg(cfg, "cfg")?.0.to_toml()?);
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a config handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn roadlab_config_free(cfg: *mut RoadlabConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs every stage into the config's output directory. With `resume`,
/// stages already recorded there are reused.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn roadlab_run_pipeline(cfg: *const RoadlabConfig, resume: bool, out: *mut *mut RoadlabRun) -> RoadlabStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        let cfg = ref_arg(cfg, "cfg")?;
        let run = run_pipeline(&cfg.0, &PipelineOptions { resume, ..PipelineOptions::default() })?;
        *slot = Box::into_raw(Box::new(RoadlabRun(run)));
        Ok(())
    })
}

/// # Safety
/// `run` must be a live run handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roadlab_run_metrics(run: *const RoadlabRun, out: *mut RoadlabMetrics) -> RoadlabStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        let ev = ref_arg(run, "run")?.0.state.evaluation.as_ref();
        let ev = ev.ok_or_else(|| Fail(RoadlabStatus::InvalidInput, "run has no evaluation".into()))?;
        *slot = RoadlabMetrics::from(&ev.report);
        Ok(())
    })
}

/// Output directory of the run, as a new string freed with `roadlab_string_free`.
///
/// # Safety
/// `run` must be a live run handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roadlab_run_dir(run: *const RoadlabRun, out: *mut *mut c_char) -> RoadlabStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        *slot = c_string(&ref_arg(run, "run")?.0.dir.display().to_string());
        Ok(())
    })
}

/// # Safety
/// `run` must be NULL or a run handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn roadlab_run_free(run: *mut RoadlabRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn roadlab_policy_load(path: *const c_char, out: *mut *mut RoadlabPolicy) -> RoadlabStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        let p = CheckpointRecord::load(&PathBuf::from(str_arg(path, "path")?))?.policy()?;
        *slot = Box::into_raw(Box::new(RoadlabPolicy(p)));
        Ok(())
    })
}

/// Number of trainable parameters, or 0 for a NULL handle.
///
/// # Safety
/// `policy` must be NULL or a live policy handle.
#[no_mangle]
pub unsafe extern "C" fn roadlab_policy_num_params(policy: *const RoadlabPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.0.num_params())
}

/// Evaluates the policy on the test split that `cfg` generates, with the
/// same evaluation seed a pipeline run of `cfg` would use.
///
/// # Safety
/// `policy` and `cfg` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roadlab_policy_evaluate(
    policy: *const RoadlabPolicy,
    cfg: *const RoadlabConfig,
    out: *mut RoadlabMetrics,
) -> RoadlabStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        let p = ref_arg(policy, "policy")?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        cfg.validate()?;
        let (_, _, test) = generate_splits(cfg)?;
        let ev = evaluate(&p.0, &test, &cfg.sim, &eval_config(cfg, &StageSeeds::new(cfg, "")))?;
        *slot = RoadlabMetrics::from(&ev.report);
        Ok(())
    })
}

/// # Safety
/// `policy` must be NULL or a policy handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn roadlab_policy_free(policy: *mut RoadlabPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Kilometers per incident over `n` rollouts.
///
/// # Safety
/// `distances_m` and `incidents` must point to `n` readable elements each
/// (or may be NULL when `n` is 0); `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roadlab_driving_score(
    distances_m: *const f64,
    incidents: *const usize,
    n: usize,
    out: *mut f64,
) -> RoadlabStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        if n > 0 && (distances_m.is_null() || incidents.is_null()) {
            return Err(null("input array"));
        }
        let (d, i) = if n == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(distances_m, n), std::slice::from_raw_parts(incidents, n))
        };
        if let Some(bad) = d.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Fail(RoadlabStatus::InvalidInput, format!("distance {bad} is not a finite non-negative number")));
        }
        *slot = roadlab::eval::driving_score(d, i);
        Ok(())
    })
}

/// Sign-test p-value for `wins` against `losses`, ties already dropped.
#[no_mangle]
pub extern "C" fn roadlab_sign_test(wins: usize, losses: usize, one_sided: bool) -> f64 {
    if one_sided {
        sign_test_one_sided(wins, losses)
    } else {
        sign_test(wins, losses)
    }
}
