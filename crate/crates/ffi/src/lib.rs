//! C ABI over `pfiso`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`PfisoStatus`]
//! and leaves a message for [`pfiso_last_error_message`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use pfiso::fit::CoeffBounds;
use pfiso::{fit_cubic, load_scenario, run_scenario, universal_potential, Error, FitProblem, RunOutput, ScenarioConfig, World};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfisoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Schema = 4,
    Validation = 5,
    Range = 6,
    /// The simulation stopped early; the returned run holds the partial record.
    Aborted = 7,
    Numerical = 8,
    Panic = 9,
}

/// Scenario configuration handle.
pub struct PfisoScenario(ScenarioConfig);

/// Finished or aborted simulation run.
pub struct PfisoRun {
    output: RunOutput,
    aborted_at: Option<u64>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfisoMetrics {
    pub id: u32,
    pub max_abs_beta_rad: f64,
    pub max_abs_yaw_rate_radps: f64,
    pub max_abs_psi_rad: f64,
    pub min_speed_mps: f64,
    pub path_length_m: f64,
    pub lateral_oscillation_rms_m: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfisoSummary {
    pub ticks: u64,
    pub dt_s: f64,
    pub min_separation_m: f64,
    pub min_edge_clearance_m: f64,
    pub all_finished: bool,
    pub collision: bool,
    pub aborted: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfisoTraceRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub beta: f64,
    pub yaw_rate: f64,
    pub v: f64,
    pub steer: f64,
    pub accel: f64,
}

/// Cubic `y = a0 + a1 u + a2 u^2 + a3 u^3` with `u = x - x_offset`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfisoCubic {
    pub coeffs: [f64; 4],
    pub x_offset: f64,
    pub x_min: f64,
    pub x_max: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let text = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(err: &Error) -> PfisoStatus {
    match err {
        Error::Io { .. } => PfisoStatus::Io,
        Error::Schema { .. } => PfisoStatus::Schema,
        Error::Validation { .. } | Error::InfeasibleBounds { .. } | Error::DegenerateWaypoints(_) => PfisoStatus::Validation,
        Error::Range(_) | Error::OracleGuard { .. } => PfisoStatus::Range,
        Error::Usage(_) => PfisoStatus::InvalidArgument,
        Error::LocalMinimum { .. } | Error::NumericalDomain { .. } | Error::DynamicsDivergence { .. } | Error::BusIntegrity { .. } => {
            PfisoStatus::Numerical
        }
    }
}

fn fail(status: PfisoStatus, message: impl Into<String>) -> PfisoStatus {
    set_last_error(message);
    status
}

fn from_error(err: Error) -> PfisoStatus {
    fail(status_of(&err), err.to_string())
}

fn guard(body: impl FnOnce() -> PfisoStatus) -> PfisoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(PfisoStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, PfisoStatus> {
    if s.is_null() {
        return Err(fail(PfisoStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(PfisoStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

macro_rules! deref {
    ($p:expr, $what:literal) => {
        match $p.as_ref() {
            Some(v) => v,
            None => return fail(PfisoStatus::NullPointer, concat!($what, " is null")),
        }
    };
}

macro_rules! deref_mut {
    ($p:expr, $what:literal) => {
        match $p.as_mut() {
            Some(v) => v,
            None => return fail(PfisoStatus::NullPointer, concat!($what, " is null")),
        }
    };
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn pfiso_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty if none failed yet.
#[no_mangle]
pub extern "C" fn pfiso_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn pfiso_scenario_default(out: *mut *mut PfisoScenario) -> PfisoStatus {
    guard(|| {
        let out = deref_mut!(out, "out");
        *out = Box::into_raw(Box::new(PfisoScenario(ScenarioConfig::default_merge())));
        PfisoStatus::Ok
    })
}

/// Loads and validates a scenario JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfiso_scenario_load(path: *const c_char, out: *mut *mut PfisoScenario) -> PfisoStatus {
    guard(|| {
        let out = deref_mut!(out, "out");
        *out = ptr::null_mut();
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_scenario(path) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(PfisoScenario(cfg)));
                PfisoStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Applies one `key=value` override, same keys as the CLI `--set`. The
/// scenario is unchanged on failure.
///
/// # Safety
/// `scenario` must come from this library, `assignment` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pfiso_scenario_set(scenario: *mut PfisoScenario, assignment: *const c_char) -> PfisoStatus {
    guard(|| {
        let scenario = deref_mut!(scenario, "scenario");
        let assignment = match read_str(assignment, "assignment") {
            Ok(a) => a,
            Err(s) => return s,
        };
        match scenario.0.apply_override(assignment) {
            Ok(cfg) => {
                scenario.0 = cfg;
                PfisoStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Scenario as JSON; free the string with [`pfiso_string_free`].
///
/// # Safety
/// `scenario` must come from this library, `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfiso_scenario_to_json(scenario: *const PfisoScenario, out: *mut *mut c_char) -> PfisoStatus {
    guard(|| {
        let scenario = deref!(scenario, "scenario");
        let out = deref_mut!(out, "out");
        match CString::new(scenario.0.to_json()) {
            Ok(s) => {
                *out = s.into_raw();
                PfisoStatus::Ok
            }
            Err(_) => fail(PfisoStatus::Panic, "JSON contained NUL"),
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn pfiso_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `scenario` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn pfiso_scenario_free(scenario: *mut PfisoScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Universal potential at `(x, y)` seen by vehicle `ego_index`, with all
/// vehicles at their configured initial states.
///
/// # Safety
/// `scenario` must come from this library, `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfiso_scenario_potential(
    scenario: *const PfisoScenario,
    ego_index: usize,
    x: f64,
    y: f64,
    out: *mut f64,
) -> PfisoStatus {
    guard(|| {
        let cfg = &deref!(scenario, "scenario").0;
        let out = deref_mut!(out, "out");
        let states: Vec<_> = cfg.vehicles.iter().map(|v| v.state).collect();
        let Some(ego) = states.get(ego_index) else {
            return fail(PfisoStatus::Range, format!("ego_index {ego_index} out of range ({} vehicles)", states.len()));
        };
        let others: Vec<_> = states.iter().filter(|s| s.id != ego.id).copied().collect();
        let world = World {
            road: &cfg.road,
            ego,
            others: &others,
        };
        *out = universal_potential(x, y, &world, &cfg.pf);
        PfisoStatus::Ok
    })
}

/// Runs the scenario to completion. On [`PfisoStatus::Aborted`] `out` still
/// receives the partial run.
///
/// # Safety
/// `scenario` must come from this library, `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfiso_run(scenario: *const PfisoScenario, out: *mut *mut PfisoRun) -> PfisoStatus {
    guard(|| {
        let cfg = &deref!(scenario, "scenario").0;
        let out = deref_mut!(out, "out");
        *out = ptr::null_mut();
        if let Err(e) = cfg.validate() {
            return from_error(e);
        }
        match run_scenario(cfg) {
            Ok(output) => {
                *out = Box::into_raw(Box::new(PfisoRun { output, aborted_at: None }));
                PfisoStatus::Ok
            }
            Err(f) => {
                set_last_error(f.to_string());
                *out = Box::into_raw(Box::new(PfisoRun {
                    output: *f.partial,
                    aborted_at: Some(f.tick),
                }));
                PfisoStatus::Aborted
            }
        }
    })
}

/// # Safety
/// `run` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn pfiso_run_free(run: *mut PfisoRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of vehicle traces in the run.
///
/// # Safety
/// `run` must come from this library, `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfiso_run_vehicle_count(run: *const PfisoRun, out: *mut usize) -> PfisoStatus {
    guard(|| {
        let run = deref!(run, "run");
        *deref_mut!(out, "out") = run.output.traces.len();
        PfisoStatus::Ok
    })
}

/// # Safety
/// `run` must come from this library, `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfiso_run_summary(run: *const PfisoRun, out: *mut PfisoSummary) -> PfisoStatus {
    guard(|| {
        let run = deref!(run, "run");
        let s = &run.output.report.summary;
        *deref_mut!(out, "out") = PfisoSummary {
            ticks: s.ticks,
            dt_s: s.dt_s,
            min_separation_m: s.min_separation_m,
            min_edge_clearance_m: s.min_edge_clearance_m,
            all_finished: s.all_finished,
            collision: s.collision,
            aborted: run.aborted_at.is_some(),
        };
        PfisoStatus::Ok
    })
}

/// Metrics of the vehicle at `index` (trace order).
///
/// # Safety
/// `run` must come from this library, `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfiso_run_metrics(run: *const PfisoRun, index: usize, out: *mut PfisoMetrics) -> PfisoStatus {
    guard(|| {
        let run = deref!(run, "run");
        let out = deref_mut!(out, "out");
        let Some(m) = run.output.report.metrics.get(index) else {
            return fail(PfisoStatus::Range, format!("vehicle index {index} out of range"));
        };
        *out = PfisoMetrics {
            id: m.id,
            max_abs_beta_rad: m.max_abs_beta_rad,
            max_abs_yaw_rate_radps: m.max_abs_yaw_rate_radps,
            max_abs_psi_rad: m.max_abs_psi_rad,
            min_speed_mps: m.min_speed_mps,
            path_length_m: m.path_length_m,
            lateral_oscillation_rms_m: m.lateral_oscillation_rms_m,
        };
        PfisoStatus::Ok
    })
}

/// Copies up to `cap` trace records of vehicle `index` into `buf` and writes
/// the total record count to `len`. Pass `buf = NULL, cap = 0` to query.
///
/// # Safety
/// `buf` must hold `cap` records, `len` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfiso_run_trace(
    run: *const PfisoRun,
    index: usize,
    buf: *mut PfisoTraceRecord,
    cap: usize,
    len: *mut usize,
) -> PfisoStatus {
    guard(|| {
        let run = deref!(run, "run");
        let len = deref_mut!(len, "len");
        let Some(trace) = run.output.traces.get(index) else {
            return fail(PfisoStatus::Range, format!("vehicle index {index} out of range"));
        };
        *len = trace.records.len();
        if cap == 0 {
            return PfisoStatus::Ok;
        }
        if buf.is_null() {
            return fail(PfisoStatus::NullPointer, "buf is null");
        }
        let dst = slice::from_raw_parts_mut(buf, cap);
        for (d, r) in dst.iter_mut().zip(&trace.records) {
            *d = PfisoTraceRecord {
                t: r.t,
                x: r.x,
                y: r.y,
                psi: r.psi,
                beta: r.beta,
                yaw_rate: r.yaw_rate,
                v: r.v,
                steer: r.steer,
                accel: r.accel,
            };
        }
        PfisoStatus::Ok
    })
}

/// Weighted cubic fit under box bounds on the coefficients (frame with
/// `xs[0]` at the origin). Null `weights` means unit weights; null
/// `lower`/`upper` means unbounded.
///
/// # Safety
/// `xs`, `ys` and non-null `weights` must hold `n` values, non-null bounds 4.
#[no_mangle]
pub unsafe extern "C" fn pfiso_fit_cubic(
    xs: *const f64,
    ys: *const f64,
    weights: *const f64,
    n: usize,
    lower: *const f64,
    upper: *const f64,
    out: *mut PfisoCubic,
) -> PfisoStatus {
    guard(|| {
        let out = deref_mut!(out, "out");
        if xs.is_null() || ys.is_null() {
            return fail(PfisoStatus::NullPointer, "xs or ys is null");
        }
        let xs = slice::from_raw_parts(xs, n).to_vec();
        let ys = slice::from_raw_parts(ys, n).to_vec();
        let weights = if weights.is_null() {
            vec![1.0; n]
        } else {
            slice::from_raw_parts(weights, n).to_vec()
        };
        let mut bounds = CoeffBounds::unbounded();
        if !lower.is_null() {
            bounds.lower.copy_from_slice(slice::from_raw_parts(lower, 4));
        }
        if !upper.is_null() {
            bounds.upper.copy_from_slice(slice::from_raw_parts(upper, 4));
        }
        match fit_cubic(&FitProblem { xs, ys, weights, bounds }) {
            Ok(p) => {
                *out = PfisoCubic {
                    coeffs: p.coeffs,
                    x_offset: p.x_offset,
                    x_min: p.x_min,
                    x_max: p.x_max,
                };
                PfisoStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
