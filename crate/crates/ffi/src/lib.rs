//! C ABI over `dlmp-core`.
//!
//! Conventions:
//! - every fallible function returns a [`DlmpStatus`]; results go through
//!   out-pointers that are only written on `DLMP_STATUS_OK`;
//! - handles are opaque and owned by the caller, who releases them with the
//!   matching `*_free` function (passing NULL is a no-op);
//! - the message of the last failure on the calling thread is available from
//!   [`dlmp_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dlmp_core::dso::{parse_participants, Participants};
use dlmp_core::market::{flat_tariff_cycle, run_dispatch_cycle, CycleReport};
use dlmp_core::netmodel::{build_linear_model, parse_case, LinearFlowModel, NetworkCase};
use dlmp_core::scenarios::preset;
use dlmp_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlmpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    OutOfRange = 3,
    /// Case file could not be parsed or is not a radial network.
    Case = 10,
    /// Linearized model could not be built.
    Model = 11,
    /// Dispatch problem invalid, infeasible or not solved.
    Dispatch = 12,
    Prosumer = 13,
    Market = 14,
    Scenario = 15,
    Io = 16,
    /// The requested quantity does not exist for this handle.
    NotAvailable = 20,
    Panic = 99,
}

/// Case, linearized model and participants, ready for dispatch.
pub struct DlmpEngine {
    case: NetworkCase,
    model: LinearFlowModel,
    participants: Participants,
}

/// Outcome of one pricing interval.
pub struct DlmpCycle {
    report: CycleReport,
}

/// Largest over-limit amounts of a cycle (zero when clear).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DlmpViolations {
    pub branch_mw: f64,
    pub voltage_pu: f64,
    pub imbalance: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DlmpStatus, msg: impl Into<String>) -> DlmpStatus {
    set_error(msg.into());
    status
}

fn from_core(e: Error) -> DlmpStatus {
    let status = match &e {
        Error::Case(_) => DlmpStatus::Case,
        Error::Model(_) => DlmpStatus::Model,
        Error::Dispatch(_) => DlmpStatus::Dispatch,
        Error::Response(_) => DlmpStatus::Prosumer,
        Error::Market(_) => DlmpStatus::Market,
        Error::Scenario(_) => DlmpStatus::Scenario,
        Error::Io { .. } => DlmpStatus::Io,
    };
    fail(status, format!("{}: {}: {e}", e.module(), e.kind()))
}

/// Runs `f`, turning panics into `DlmpStatus::Panic`.
fn guard(f: impl FnOnce() -> Result<(), DlmpStatus>) -> DlmpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlmpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DlmpStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DlmpStatus> {
    if p.is_null() {
        return Err(fail(DlmpStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DlmpStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, DlmpStatus> {
    p.as_ref()
        .ok_or_else(|| fail(DlmpStatus::NullPointer, format!("{what} is NULL")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), DlmpStatus> {
    if p.is_null() {
        Err(fail(DlmpStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dlmp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlmp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn build_engine(case_json: &str, participants_json: Option<&str>) -> Result<DlmpEngine, DlmpStatus> {
    let case = parse_case(case_json).map_err(|e| from_core(e.into()))?;
    let model = build_linear_model(&case).map_err(|e| from_core(e.into()))?;
    let participants =
        parse_participants(participants_json.unwrap_or(case_json)).map_err(|e| from_core(e.into()))?;
    participants.validate(&case).map_err(|e| from_core(e.into()))?;
    Ok(DlmpEngine {
        case,
        model,
        participants,
    })
}

/// Engine over the bundled 33-bus case and its participants.
///
/// # Safety
/// `out` must be NULL or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dlmp_engine_new_default(out: *mut *mut DlmpEngine) -> DlmpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let engine = build_engine(dlmp_core::IEEE33_CASE_JSON, None)?;
        *out = Box::into_raw(Box::new(engine));
        Ok(())
    })
}

/// Engine from JSON text. When `participants_json` is NULL the participants
/// are read from the case document.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dlmp_engine_from_json(
    case_json: *const c_char,
    participants_json: *const c_char,
    out: *mut *mut DlmpEngine,
) -> DlmpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let case = str_arg(case_json, "case_json")?;
        let parts = if participants_json.is_null() {
            None
        } else {
            Some(str_arg(participants_json, "participants_json")?)
        };
        let engine = build_engine(case, parts)?;
        *out = Box::into_raw(Box::new(engine));
        Ok(())
    })
}

/// # Safety
/// `engine` must be NULL or a handle from `dlmp_engine_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlmp_engine_free(engine: *mut DlmpEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Number of node-phases (the length of every price vector).
///
/// # Safety
/// `engine` must be a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dlmp_engine_num_node_phases(engine: *const DlmpEngine, out: *mut usize) -> DlmpStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        out_ptr(out, "out")?;
        *out = e.model.num_node_phases();
        Ok(())
    })
}

unsafe fn run(
    engine: *const DlmpEngine,
    scenario: *const c_char,
    flat: Option<f64>,
    out: *mut *mut DlmpCycle,
) -> DlmpStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        out_ptr(out, "out")?;
        let cfg = preset(str_arg(scenario, "scenario")?).map_err(|e| from_core(e.into()))?;
        let parts = cfg.apply(&e.participants).map_err(|e| from_core(e.into()))?;
        let report = match flat {
            None => run_dispatch_cycle(&e.case, &e.model, &parts, &cfg.limits),
            Some(t) => flat_tariff_cycle(&e.case, &e.model, &parts, &cfg.limits, t),
        }
        .map_err(from_core)?;
        *out = Box::into_raw(Box::new(DlmpCycle { report }));
        Ok(())
    })
}

/// Dispatches the named scenario preset and evaluates the agents' responses
/// to the resulting prices.
///
/// # Safety
/// `engine` must be a live handle, `scenario` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlmp_run_cycle(
    engine: *const DlmpEngine,
    scenario: *const c_char,
    out: *mut *mut DlmpCycle,
) -> DlmpStatus {
    run(engine, scenario, None, out)
}

/// Evaluates the scenario under a flat tariff ($/MWh) with no dispatch.
///
/// # Safety
/// As for [`dlmp_run_cycle`].
#[no_mangle]
pub unsafe extern "C" fn dlmp_run_flat(
    engine: *const DlmpEngine,
    scenario: *const c_char,
    tariff: f64,
    out: *mut *mut DlmpCycle,
) -> DlmpStatus {
    run(engine, scenario, Some(tariff), out)
}

/// # Safety
/// `cycle` must be NULL or a handle from `dlmp_run_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlmp_cycle_free(cycle: *mut DlmpCycle) {
    if !cycle.is_null() {
        drop(Box::from_raw(cycle));
    }
}

/// Price at position `index`: bus id, phase (0 = a, 1 = b, 2 = c),
/// P-price ($/MWh) and Q-price ($/MVarh).
///
/// # Safety
/// `cycle` must be a live handle; out-pointers must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dlmp_cycle_price(
    cycle: *const DlmpCycle,
    index: usize,
    bus: *mut u32,
    phase: *mut u8,
    pi_p: *mut f64,
    pi_q: *mut f64,
) -> DlmpStatus {
    guard(|| {
        let c = handle(cycle, "cycle")?;
        out_ptr(bus, "bus")?;
        out_ptr(phase, "phase")?;
        out_ptr(pi_p, "pi_p")?;
        out_ptr(pi_q, "pi_q")?;
        let prices = &c.report.prices;
        let Some(&(b, ph)) = prices.node_phases.get(index) else {
            return Err(fail(
                DlmpStatus::OutOfRange,
                format!("price index {index} out of range ({} node-phases)", prices.node_phases.len()),
            ));
        };
        *bus = b;
        *phase = ph.index() as u8;
        *pi_p = prices.pi_p[index];
        *pi_q = prices.pi_q[index];
        Ok(())
    })
}

/// Dispatch objective ($). `DLMP_STATUS_NOT_AVAILABLE` for flat-tariff cycles.
///
/// # Safety
/// `cycle` must be a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dlmp_cycle_objective(cycle: *const DlmpCycle, out: *mut f64) -> DlmpStatus {
    guard(|| {
        let c = handle(cycle, "cycle")?;
        out_ptr(out, "out")?;
        let d = c
            .report
            .dispatch
            .as_ref()
            .ok_or_else(|| fail(DlmpStatus::NotAvailable, "flat-tariff cycle has no dispatch"))?;
        *out = d.objective;
        Ok(())
    })
}

/// Largest gap (p.u.) between the dispatch and the agents' own choices.
///
/// # Safety
/// `cycle` must be a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dlmp_cycle_max_deviation(cycle: *const DlmpCycle, out: *mut f64) -> DlmpStatus {
    guard(|| {
        let c = handle(cycle, "cycle")?;
        out_ptr(out, "out")?;
        *out = c.report.max_deviation();
        Ok(())
    })
}

/// # Safety
/// `cycle` must be a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dlmp_cycle_violations(cycle: *const DlmpCycle, out: *mut DlmpViolations) -> DlmpStatus {
    guard(|| {
        let c = handle(cycle, "cycle")?;
        out_ptr(out, "out")?;
        let v = &c.report.violations;
        *out = DlmpViolations {
            branch_mw: v.max_branch(),
            voltage_pu: v.max_voltage(),
            imbalance: v.max_imbalance(),
        };
        Ok(())
    })
}

/// Full cycle report as JSON. Release with [`dlmp_string_free`].
///
/// # Safety
/// `cycle` must be a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dlmp_cycle_to_json(cycle: *const DlmpCycle, out: *mut *mut c_char) -> DlmpStatus {
    guard(|| {
        let c = handle(cycle, "cycle")?;
        out_ptr(out, "out")?;
        let json = dlmp_core::report::to_json(&c.report);
        *out = CString::new(json)
            .map_err(|_| fail(DlmpStatus::Panic, "report contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlmp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
