//! C ABI over `offenv-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns an
//! `OffenvStatus`; on failure the message is available from
//! `offenv_last_error` on the same thread until the next failing call.
//! Strings returned by the library are freed with `offenv_string_free`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use offenv_core::env::{self, GridworldSpec};
use offenv_core::harness::{self, Estimator, ExperimentConfig, ResultRow};
use offenv_core::mdp::{self, Policy, TabularMdp};
use offenv_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffenvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Invalid = 3,
    Shape = 4,
    Singular = 5,
    Coverage = 6,
    Domain = 7,
    SourceMismatch = 8,
    Numerical = 9,
    Divergence = 10,
    Config = 11,
    Io = 12,
    Parse = 13,
    OutOfRange = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffenvEstimator {
    BetaDiceLinear = 0,
    BetaDiceRkhs = 1,
    BetaGradientDice = 2,
    QRoute = 3,
    SimulatorOnly = 4,
    VanillaMis = 5,
    Oracle = 6,
}

impl From<Estimator> for OffenvEstimator {
    fn from(e: Estimator) -> Self {
        match e {
            Estimator::BetaDiceLinear => Self::BetaDiceLinear,
            Estimator::BetaDiceRkhs => Self::BetaDiceRkhs,
            Estimator::BetaGradientDice => Self::BetaGradientDice,
            Estimator::QRoute => Self::QRoute,
            Estimator::SimulatorOnly => Self::SimulatorOnly,
            Estimator::VanillaMis => Self::VanillaMis,
            Estimator::Oracle => Self::Oracle,
        }
    }
}

/// One sweep result. `ok` is 0 when the estimator failed; the message is
/// then available from `offenv_sweep_row_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OffenvRow {
    pub estimator: OffenvEstimator,
    pub eps_real: f64,
    pub delta: f64,
    pub alpha: f64,
    pub n: u64,
    pub seed: u64,
    pub j_hat: f64,
    pub j_te_exact: f64,
    pub abs_err: f64,
    pub sq_err: f64,
    pub ok: u8,
}

/// A tabular MDP.
pub struct OffenvMdp(TabularMdp);

/// A stochastic policy table.
pub struct OffenvPolicy(Policy);

/// Rows of a finished sweep.
pub struct OffenvSweep {
    rows: Vec<ResultRow>,
    errors: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(OffenvStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Invalid(_) => OffenvStatus::Invalid,
            Error::Shape(_) => OffenvStatus::Shape,
            Error::Singular(_) => OffenvStatus::Singular,
            Error::Coverage(_) => OffenvStatus::Coverage,
            Error::Domain(_) => OffenvStatus::Domain,
            Error::SourceMismatch { .. } => OffenvStatus::SourceMismatch,
            Error::Numerical(_) => OffenvStatus::Numerical,
            Error::Divergence(_) => OffenvStatus::Divergence,
            Error::Config(_) => OffenvStatus::Config,
            Error::Io(_) => OffenvStatus::Io,
            Error::Json(_) | Error::Csv(_) => OffenvStatus::Parse,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: OffenvStatus, msg: &str) -> Failure {
    Failure(status, msg.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> OffenvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OffenvStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside offenv".into());
            OffenvStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(OffenvStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(OffenvStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(OffenvStatus::NullPointer, format!("null {what} handle")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(OffenvStatus::NullPointer, "null output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| fail(OffenvStatus::Invalid, "string contains NUL"))?;
    write_out(out, c.into_raw())
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn offenv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn offenv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses an MDP document.
#[no_mangle]
pub unsafe extern "C" fn offenv_mdp_from_json(json: *const c_char, out: *mut *mut OffenvMdp) -> OffenvStatus {
    guard(|| {
        let mdp = TabularMdp::from_json(read_str(json)?)?;
        write_out(out, Box::into_raw(Box::new(OffenvMdp(mdp))))
    })
}

/// Builds a gridworld with noise `eps`. `spec_json` may be NULL for the
/// default 4x4 layout.
#[no_mangle]
pub unsafe extern "C" fn offenv_gridworld_build(spec_json: *const c_char, eps: f64, out: *mut *mut OffenvMdp) -> OffenvStatus {
    guard(|| {
        let spec: GridworldSpec = if spec_json.is_null() {
            GridworldSpec::default()
        } else {
            serde_json::from_str(read_str(spec_json)?).map_err(|e| Failure(OffenvStatus::Config, e.to_string()))?
        };
        let mdp = spec.build(eps)?;
        write_out(out, Box::into_raw(Box::new(OffenvMdp(mdp))))
    })
}

/// Serializes an MDP; free the result with `offenv_string_free`.
#[no_mangle]
pub unsafe extern "C" fn offenv_mdp_to_json(mdp: *const OffenvMdp, out: *mut *mut c_char) -> OffenvStatus {
    guard(|| write_string(out, deref(mdp, "mdp")?.0.to_json()?))
}

#[no_mangle]
pub unsafe extern "C" fn offenv_mdp_n_states(mdp: *const OffenvMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.0.n_states())
}

#[no_mangle]
pub unsafe extern "C" fn offenv_mdp_n_actions(mdp: *const OffenvMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.0.n_actions())
}

#[no_mangle]
pub unsafe extern "C" fn offenv_mdp_free(mdp: *mut OffenvMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// Policy from a row-major `n_states x n_actions` probability table.
#[no_mangle]
pub unsafe extern "C" fn offenv_policy_new(
    n_states: usize,
    n_actions: usize,
    probs: *const f64,
    out: *mut *mut OffenvPolicy,
) -> OffenvStatus {
    guard(|| {
        if probs.is_null() {
            return Err(fail(OffenvStatus::NullPointer, "null probability table"));
        }
        let len = n_states.checked_mul(n_actions).ok_or_else(|| fail(OffenvStatus::Shape, "table size overflows"))?;
        let table = std::slice::from_raw_parts(probs, len).to_vec();
        let pi = Policy::new(n_states, n_actions, table)?;
        write_out(out, Box::into_raw(Box::new(OffenvPolicy(pi))))
    })
}

/// Greedy optimal policy of `mdp`, ties broken toward the lowest action.
#[no_mangle]
pub unsafe extern "C" fn offenv_policy_optimal(mdp: *const OffenvMdp, out: *mut *mut OffenvPolicy) -> OffenvStatus {
    guard(|| {
        let pi = env::optimal_policy(&deref(mdp, "mdp")?.0)?;
        write_out(out, Box::into_raw(Box::new(OffenvPolicy(pi))))
    })
}

/// `(1 - rate) * base + rate * uniform`.
#[no_mangle]
pub unsafe extern "C" fn offenv_policy_mix(base: *const OffenvPolicy, rate: f64, out: *mut *mut OffenvPolicy) -> OffenvStatus {
    guard(|| {
        let pi = env::mix_policy(&deref(base, "policy")?.0, rate)?;
        write_out(out, Box::into_raw(Box::new(OffenvPolicy(pi))))
    })
}

/// Copies the probability table into `buf`, which must hold
/// `n_states * n_actions` values.
#[no_mangle]
pub unsafe extern "C" fn offenv_policy_table(pi: *const OffenvPolicy, buf: *mut f64, len: usize) -> OffenvStatus {
    guard(|| copy_out(deref(pi, "policy")?.0.table(), buf, len))
}

#[no_mangle]
pub unsafe extern "C" fn offenv_policy_free(pi: *mut OffenvPolicy) {
    if !pi.is_null() {
        drop(Box::from_raw(pi));
    }
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(fail(OffenvStatus::NullPointer, "null output buffer"));
    }
    if len != values.len() {
        return Err(Failure(OffenvStatus::Shape, format!("buffer holds {len} values, need {}", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, len);
    Ok(())
}

/// Exact normalized discounted value `J(pi)`.
#[no_mangle]
pub unsafe extern "C" fn offenv_policy_value(mdp: *const OffenvMdp, pi: *const OffenvPolicy, out: *mut f64) -> OffenvStatus {
    guard(|| {
        let v = mdp::policy_value(&deref(mdp, "mdp")?.0, &deref(pi, "policy")?.0)?;
        write_out(out, v)
    })
}

/// Exact state-action occupancy, row-major into `buf` of length
/// `n_states * n_actions`.
#[no_mangle]
pub unsafe extern "C" fn offenv_occupancy(
    mdp: *const OffenvMdp,
    pi: *const OffenvPolicy,
    buf: *mut f64,
    len: usize,
) -> OffenvStatus {
    guard(|| {
        let occ = mdp::state_action_occupancy(&deref(mdp, "mdp")?.0, &deref(pi, "policy")?.0)?;
        copy_out(&occ.dist, buf, len)
    })
}

/// Runs a sweep described by an experiment config document on `jobs`
/// threads (0 picks one).
#[no_mangle]
pub unsafe extern "C" fn offenv_sweep_run(config_json: *const c_char, jobs: usize, out: *mut *mut OffenvSweep) -> OffenvStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_json(read_str(config_json)?)?;
        let rows = harness::run_sweep(&cfg, jobs.max(1))?;
        let errors = rows.iter().map(|r| CString::new(r.error.replace('\0', " ")).unwrap_or_default()).collect();
        write_out(out, Box::into_raw(Box::new(OffenvSweep { rows, errors })))
    })
}

#[no_mangle]
pub unsafe extern "C" fn offenv_sweep_len(sweep: *const OffenvSweep) -> usize {
    sweep.as_ref().map_or(0, |s| s.rows.len())
}

#[no_mangle]
pub unsafe extern "C" fn offenv_sweep_row(sweep: *const OffenvSweep, index: usize, out: *mut OffenvRow) -> OffenvStatus {
    guard(|| {
        let r = deref(sweep, "sweep")?
            .rows
            .get(index)
            .ok_or_else(|| fail(OffenvStatus::OutOfRange, "row index out of range"))?;
        write_out(
            out,
            OffenvRow {
                estimator: r.estimator.into(),
                eps_real: r.eps_real,
                delta: r.delta,
                alpha: r.alpha,
                n: r.n as u64,
                seed: r.seed,
                j_hat: r.j_hat,
                j_te_exact: r.j_te_exact,
                abs_err: r.abs_err,
                sq_err: r.sq_err,
                ok: r.is_ok() as u8,
            },
        )
    })
}

/// Failure message of a row, empty for successful rows. Owned by the sweep.
#[no_mangle]
pub unsafe extern "C" fn offenv_sweep_row_error(sweep: *const OffenvSweep, index: usize) -> *const c_char {
    sweep.as_ref().and_then(|s| s.errors.get(index)).map_or(ptr::null(), |e| e.as_ptr())
}

/// The rows as CSV, byte-identical to the CLI's `results.csv`.
#[no_mangle]
pub unsafe extern "C" fn offenv_sweep_to_csv(sweep: *const OffenvSweep, out: *mut *mut c_char) -> OffenvStatus {
    guard(|| {
        let mut buf = Vec::new();
        harness::write_rows_csv(&deref(sweep, "sweep")?.rows, &mut buf)?;
        let text = String::from_utf8(buf).map_err(|_| fail(OffenvStatus::Parse, "CSV is not UTF-8"))?;
        write_string(out, text)
    })
}

#[no_mangle]
pub unsafe extern "C" fn offenv_sweep_free(sweep: *mut OffenvSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}

/// Snake-case name of an estimator. Static; do not free.
#[no_mangle]
pub extern "C" fn offenv_estimator_name(e: OffenvEstimator) -> *const c_char {
    let name: &'static CStr = match e {
        OffenvEstimator::BetaDiceLinear => c"beta_dice_linear",
        OffenvEstimator::BetaDiceRkhs => c"beta_dice_rkhs",
        OffenvEstimator::BetaGradientDice => c"beta_gradient_dice",
        OffenvEstimator::QRoute => c"q_route",
        OffenvEstimator::SimulatorOnly => c"simulator_only",
        OffenvEstimator::VanillaMis => c"vanilla_mis",
        OffenvEstimator::Oracle => c"oracle",
    };
    name.as_ptr()
}
