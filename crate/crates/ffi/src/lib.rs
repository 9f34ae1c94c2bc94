//! C ABI over `tfm-lab`.
//!
//! Scenarios cross the boundary as TOML text and live behind an opaque
//! [`TfmScenario`] handle. Every fallible call returns a [`TfmStatus`]; on
//! failure [`tfm_last_error`] describes what went wrong on the calling
//! thread. Strings returned by the library are freed with
//! [`tfm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tfm_lab::audit::{audit_approx_dsic_bound, audit_bpic, audit_dsic, AuditOptions, Grid};
use tfm_lab::constructions::construct_thm3;
use tfm_lab::{
    scenario_digest, welfare, BiddingStrategy, Block, Mechanism, Rational, Scenario, ScenarioFile,
    Tfm, TfmError, TxId, Universe, Verdict, DEFAULT_BUDGET,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfmStatus {
    Ok = 0,
    /// An audit found witnesses.
    Fail = 1,
    InvalidArgument = 2,
    ParseError = 3,
    BudgetExceeded = 4,
    GuardrailExceeded = 5,
    Unsupported = 6,
    ConstructionFailed = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfmAuditKind {
    Dsic = 0,
    Bpic = 1,
    ApproxDsic = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TfmAuditSummary {
    /// 1 when the audit passed.
    pub passed: u8,
    pub max_regret: i64,
    pub cells_checked: u64,
    pub cells_skipped: u64,
    pub witnesses: u64,
}

/// A parsed scenario file: scenario, mechanism and grid.
pub struct TfmScenario {
    scenario: Scenario,
    mechanism: Option<Mechanism>,
    grid: Option<Grid>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &TfmError) -> TfmStatus {
    match e {
        TfmError::InvalidScenario(_) | TfmError::UnknownTx(_) => TfmStatus::ParseError,
        TfmError::BudgetExceeded { .. } => TfmStatus::BudgetExceeded,
        TfmError::GuardrailExceeded(_) => TfmStatus::GuardrailExceeded,
        TfmError::ConstructionFailed(_)
        | TfmError::NotDsicCaseC2 { .. }
        | TfmError::AlreadyTrivial => TfmStatus::ConstructionFailed,
        TfmError::InvalidGrid(_) => TfmStatus::InvalidArgument,
        _ => TfmStatus::Unsupported,
    }
}

/// Runs `f`, recording errors and panics in the thread-local slot.
fn guard(f: impl FnOnce() -> Result<TfmStatus, (TfmStatus, String)>) -> TfmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            TfmStatus::Panic
        }
    }
}

fn lib_err(e: TfmError) -> (TfmStatus, String) {
    (status_of(&e), e.to_string())
}

fn arg_err(msg: &str) -> (TfmStatus, String) {
    (TfmStatus::InvalidArgument, msg.to_string())
}

fn into_c_string(s: String, out: *mut *mut c_char) -> Result<TfmStatus, (TfmStatus, String)> {
    let c = CString::new(s).map_err(|_| arg_err("string contains NUL"))?;
    // SAFETY: callers check `out` for null before calling.
    unsafe { *out = c.into_raw() };
    Ok(TfmStatus::Ok)
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn tfm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a scenario file.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tfm_scenario_from_toml(
    toml: *const c_char,
    out: *mut *mut TfmScenario,
) -> TfmStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return Err(arg_err("null argument"));
        }
        let text = CStr::from_ptr(toml).to_str().map_err(|_| {
            (
                TfmStatus::ParseError,
                "scenario text is not UTF-8".to_string(),
            )
        })?;
        let file = ScenarioFile::parse(text).map_err(lib_err)?;
        let handle = TfmScenario {
            scenario: file.scenario().map_err(lib_err)?,
            mechanism: file.mechanism().map_err(lib_err)?,
            grid: file.grid().map_err(lib_err)?,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(TfmStatus::Ok)
    })
}

/// # Safety
/// `scenario` must come from [`tfm_scenario_from_toml`] and not be used
/// afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn tfm_scenario_free(scenario: *mut TfmScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Number of transactions, or 0 for NULL.
///
/// # Safety
/// `scenario` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tfm_scenario_transaction_count(scenario: *const TfmScenario) -> usize {
    scenario
        .as_ref()
        .map_or(0, |s| s.scenario.transactions().len())
}

/// 12-hex-digit scenario digest as a new string.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tfm_scenario_digest(
    scenario: *const TfmScenario,
    out: *mut *mut c_char,
) -> TfmStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| arg_err("null scenario"))?;
        if out.is_null() {
            return Err(arg_err("null output"));
        }
        into_c_string(scenario_digest(&s.scenario), out)
    })
}

fn mechanism(s: &TfmScenario) -> Result<Mechanism, (TfmStatus, String)> {
    s.mechanism
        .ok_or_else(|| arg_err("scenario file has no [mechanism] table"))
}

/// Audits the scenario under its own mechanism with the preset's
/// recommended bidding strategy. A grid step of 0 means "use the file's
/// grid, or 0..=20 step 1". Returns `TFM_STATUS_FAIL` when witnesses exist;
/// `out` is filled either way.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tfm_audit(
    scenario: *const TfmScenario,
    kind: TfmAuditKind,
    grid_step: i64,
    grid_max: i64,
    jobs: u32,
    out: *mut TfmAuditSummary,
) -> TfmStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| arg_err("null scenario"))?;
        let out = out.as_mut().ok_or_else(|| arg_err("null output"))?;
        let mech = mechanism(s)?;
        let grid = if grid_step == 0 {
            s.grid.unwrap_or_default()
        } else {
            Grid::new(grid_step, grid_max).map_err(lib_err)?
        };
        let opts = AuditOptions {
            jobs: jobs.max(1) as usize,
            ..AuditOptions::default()
        };
        let list = std::slice::from_ref(&s.scenario);
        let strategy = BiddingStrategy::recommended_for(&mech);
        let report = match kind {
            TfmAuditKind::Dsic => audit_dsic(&mech, strategy, list, &grid, &opts),
            TfmAuditKind::Bpic => audit_bpic(&mech, list, &grid, &opts),
            TfmAuditKind::ApproxDsic => audit_approx_dsic_bound(&mech, list, &grid, &opts),
        }
        .map_err(lib_err)?;
        *out = TfmAuditSummary {
            passed: u8::from(report.verdict == Verdict::Pass),
            max_regret: report.max_regret.0,
            cells_checked: report.cells_checked,
            cells_skipped: report.cells_skipped,
            witnesses: report.witnesses.len() as u64,
        };
        Ok(if report.passed() {
            TfmStatus::Ok
        } else {
            TfmStatus::Fail
        })
    })
}

/// Writes the ids of the block the mechanism recommends at the file's bids
/// into `ids`. `len` receives the block length; when it exceeds `capacity`
/// nothing is written and `TFM_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `ids` must hold `capacity` elements (may be NULL when `capacity` is 0);
/// `len` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tfm_recommended_block(
    scenario: *const TfmScenario,
    ids: *mut u32,
    capacity: usize,
    len: *mut usize,
) -> TfmStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| arg_err("null scenario"))?;
        let len = len.as_mut().ok_or_else(|| arg_err("null length"))?;
        let mech = mechanism(s)?;
        let universe = Universe::new(&s.scenario, DEFAULT_BUDGET).map_err(lib_err)?;
        let i = mech
            .recommend(&s.scenario.bids(), &s.scenario, &universe)
            .map_err(lib_err)?;
        let block = universe.block(i);
        *len = block.len();
        if block.len() > capacity {
            return Ok(TfmStatus::BufferTooSmall);
        }
        if !block.is_empty() {
            if ids.is_null() {
                return Err(arg_err("null id buffer"));
            }
            let dst = std::slice::from_raw_parts_mut(ids, capacity);
            for (d, id) in dst.iter_mut().zip(block.ids()) {
                *d = id.0;
            }
        }
        Ok(TfmStatus::Ok)
    })
}

/// Welfare `v_BP(B) + sum of user valuations in B` of the block given by
/// `ids`, in order.
///
/// # Safety
/// `ids` must hold `len` elements (may be NULL when `len` is 0); `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tfm_welfare(
    scenario: *const TfmScenario,
    ids: *const u32,
    len: usize,
    out: *mut i64,
) -> TfmStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| arg_err("null scenario"))?;
        let out = out.as_mut().ok_or_else(|| arg_err("null output"))?;
        let ids: &[u32] = if len == 0 {
            &[]
        } else if ids.is_null() {
            return Err(arg_err("null id buffer"));
        } else {
            std::slice::from_raw_parts(ids, len)
        };
        let block = Block(ids.iter().map(|i| TxId(*i)).collect());
        s.scenario.validate_block(&block).map_err(lib_err)?;
        *out = welfare(&block, &s.scenario).map_err(lib_err)?.0;
        Ok(TfmStatus::Ok)
    })
}

/// Builds the three-block welfare counterexample for the trivial mechanism
/// at ratio `rho_num / rho_den` and returns it as scenario-file TOML.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tfm_welfare_counterexample(
    rho_num: i64,
    rho_den: i64,
    out: *mut *mut c_char,
) -> TfmStatus {
    guard(|| {
        if out.is_null() {
            return Err(arg_err("null output"));
        }
        if rho_den <= 0 || rho_num <= 0 {
            return Err(arg_err("rho must be a positive fraction"));
        }
        let rho = Rational::new(rho_num as i128, rho_den as i128);
        let built = construct_thm3(&Mechanism::Trivial, rho).map_err(lib_err)?;
        let text =
            ScenarioFile::from_scenario(&built.scenario, Some(&Mechanism::Trivial), None).to_toml();
        into_c_string(text, out)
    })
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tfm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
