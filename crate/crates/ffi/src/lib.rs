//! C ABI over the version store, the trace-driven simulator and the
//! security bounds.
//!
//! Objects are opaque heap handles released with the matching `_free`
//! function. Every fallible call returns an `FM_*` status code; the message
//! of the last failure on the calling thread is available from
//! [`fm_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use freshmem::config::RunConfig;
use freshmem::engine::EngineError;
use freshmem::params::{Geometry, ParamError, SecurityParams};
use freshmem::security::{exhaustion_bound, no_reset_prob, ExhaustionQuery};
use freshmem::sim::Simulator;
use freshmem::trace::TraceEvent;
use freshmem::trip::{Format, StoreError, VersionStore};

pub const FM_OK: c_int = 0;
pub const FM_ERR_NULL: c_int = -1;
pub const FM_ERR_INVALID_ARG: c_int = -2;
pub const FM_ERR_OUT_OF_RANGE: c_int = -3;
pub const FM_ERR_CAPACITY: c_int = -4;
pub const FM_ERR_INTEGRITY: c_int = -5;
pub const FM_ERR_HALTED: c_int = -6;
pub const FM_ERR_PARSE: c_int = -7;
pub const FM_ERR_INTERNAL: c_int = -8;

/// Version store handle.
pub struct FmStore(VersionStore);

/// Simulator handle.
pub struct FmSimulator(Simulator);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmFormat {
    Flat = 0,
    Uneven = 1,
    Full = 2,
}

impl From<Format> for FmFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Flat => Self::Flat,
            Format::Uneven => Self::Uneven,
            Format::Full => Self::Full,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FmUpdate {
    pub new_version: u64,
    pub format_after: FmFormat,
    pub leading_advanced: bool,
    pub reset_triggered: bool,
    pub upgraded_to_uneven: bool,
    pub normalized: bool,
    pub upgraded_to_full: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FmUsage {
    pub pages_total: u64,
    pub pages_touched: u64,
    pub pages_flat: u64,
    pub pages_uneven: u64,
    pub pages_full: u64,
    pub static_bytes: u64,
    pub dynamic_bytes: u64,
    pub peak_bytes: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FmAccess {
    pub data_bytes: u64,
    pub mac_bytes: u64,
    pub device_bytes: u64,
    pub device_transactions: u32,
    pub tree_fetches: u32,
    pub latency_ns: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (c_int, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn store_code(e: &StoreError) -> c_int {
    match e {
        StoreError::Param(ParamError::OutOfRange { .. }) | StoreError::PageOutOfRange { .. } => FM_ERR_OUT_OF_RANGE,
        StoreError::Param(_) | StoreError::Snapshot(_) => FM_ERR_INVALID_ARG,
        StoreError::CapacityTooSmall { .. } | StoreError::Rejected { .. } => FM_ERR_CAPACITY,
    }
}

fn store_err(e: StoreError) -> Failure {
    (store_code(&e), e.to_string())
}

fn engine_err(e: EngineError) -> Failure {
    let code = match &e {
        EngineError::Store(s) => store_code(s),
        EngineError::Param(ParamError::OutOfRange { .. }) => FM_ERR_OUT_OF_RANGE,
        EngineError::Param(_) | EngineError::Config(_) => FM_ERR_INVALID_ARG,
        EngineError::MacRegion { .. } | EngineError::OutOfRange { .. } => FM_ERR_OUT_OF_RANGE,
        EngineError::UvOverflow { .. } => FM_ERR_CAPACITY,
        EngineError::Integrity { .. } => FM_ERR_INTEGRITY,
        EngineError::KillSwitch(_) => FM_ERR_HALTED,
    };
    (code, e.to_string())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FM_OK,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            FM_ERR_INTERNAL
        }
    }
}

fn null() -> Failure {
    (FM_ERR_NULL, "null pointer argument".into())
}

/// # Safety
/// `p` must be null or valid for writes of `T`.
unsafe fn write_out<T>(p: *mut T, v: T) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null());
    }
    p.write(v);
    Ok(())
}

/// # Safety
/// `p` must be null or a live handle created by this library.
unsafe fn handle<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a store with the default 4 KB page / 64 B block geometry.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fm_store_new(
    stealth_bits: u32,
    upper_bits: u32,
    reset_exp: u32,
    protected_bytes: u64,
    capacity_bytes: u64,
    seed: u64,
    out: *mut *mut FmStore,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let params = SecurityParams::new(stealth_bits, upper_bits, reset_exp)
            .map_err(|e| (FM_ERR_INVALID_ARG, e.to_string()))?;
        let store =
            VersionStore::new(Geometry::default(), params, protected_bytes, capacity_bytes, seed).map_err(store_err)?;
        write_out(out, Box::into_raw(Box::new(FmStore(store))))
    })
}

/// # Safety
/// `store` must be null or a handle from [`fm_store_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_store_free(store: *mut FmStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `store` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fm_store_read_version(store: *mut FmStore, addr: u64, out: *mut u64) -> c_int {
    guard(|| {
        let s = handle(store)?;
        let v = s.0.read_version(addr).map_err(store_err)?;
        write_out(out, v.get())
    })
}

/// # Safety
/// `store` must be a live handle; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn fm_store_update_version(store: *mut FmStore, addr: u64, out: *mut FmUpdate) -> c_int {
    guard(|| {
        let s = handle(store)?;
        let r = s.0.update_version(addr).map_err(store_err)?;
        if !out.is_null() {
            out.write(FmUpdate {
                new_version: r.new_version.get(),
                format_after: r.format_after.into(),
                leading_advanced: r.events.leading_advanced,
                reset_triggered: r.events.reset_triggered,
                upgraded_to_uneven: r.events.upgraded_to_uneven,
                normalized: r.events.normalized,
                upgraded_to_full: r.events.upgraded_to_full,
            });
        }
        Ok(())
    })
}

/// Re-randomizes `page` and returns its new base version in `new_base`.
///
/// # Safety
/// `store` must be a live handle; `new_base` may be null.
#[no_mangle]
pub unsafe extern "C" fn fm_store_reset_page(store: *mut FmStore, page: u64, new_base: *mut u64) -> c_int {
    guard(|| {
        let s = handle(store)?;
        let u = s.0.reset_page(page).map_err(store_err)?;
        if !new_base.is_null() {
            new_base.write(u.new_base.get());
        }
        Ok(())
    })
}

/// # Safety
/// `store` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fm_store_usage(store: *const FmStore, out: *mut FmUsage) -> c_int {
    guard(|| {
        let s = store.as_ref().ok_or_else(null)?;
        let u = s.0.usage_stats();
        write_out(
            out,
            FmUsage {
                pages_total: u.pages_total,
                pages_touched: u.pages_touched,
                pages_flat: u.pages_flat,
                pages_uneven: u.pages_uneven,
                pages_full: u.pages_full,
                static_bytes: u.static_bytes,
                dynamic_bytes: u.dynamic_bytes,
                peak_bytes: u.peak_bytes,
            },
        )
    })
}

/// Creates a simulator from a JSON run configuration; the trace section is
/// ignored and events are fed with [`fm_simulator_access`].
///
/// # Safety
/// `config_json` must be a nul-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fm_simulator_new_json(config_json: *const c_char, out: *mut *mut FmSimulator) -> c_int {
    guard(|| {
        if config_json.is_null() || out.is_null() {
            return Err(null());
        }
        let text =
            CStr::from_ptr(config_json).to_str().map_err(|e| (FM_ERR_PARSE, format!("config is not UTF-8: {e}")))?;
        let cfg = RunConfig::from_json(text).map_err(|e| (FM_ERR_PARSE, e.to_string()))?;
        let sim = Simulator::new(cfg.mode, cfg.engine_config()).map_err(engine_err)?;
        write_out(out, Box::into_raw(Box::new(FmSimulator(sim))))
    })
}

/// # Safety
/// `sim` must be null or a handle from [`fm_simulator_new_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_simulator_free(sim: *mut FmSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Processes one access. After a kill switch or capacity rejection every
/// further call fails with [`FM_ERR_HALTED`].
///
/// # Safety
/// `sim` must be a live handle; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn fm_simulator_access(
    sim: *mut FmSimulator,
    is_write: bool,
    addr: u64,
    out: *mut FmAccess,
) -> c_int {
    guard(|| {
        let s = handle(sim)?;
        let halted = s.0.halted().is_some();
        let event = if is_write { TraceEvent::write(addr) } else { TraceEvent::read(addr) };
        let o = s.0.step(event).map_err(|e| if halted { (FM_ERR_HALTED, e.to_string()) } else { engine_err(e) })?;
        if !out.is_null() {
            out.write(FmAccess {
                data_bytes: o.data_bytes(),
                mac_bytes: o.mac_bytes,
                device_bytes: o.device_bytes,
                device_transactions: o.device_transactions(),
                tree_fetches: o.tree_fetches,
                latency_ns: o.latency_ns,
            });
        }
        Ok(())
    })
}

/// Statistics document of the run so far. Release with [`fm_string_free`].
///
/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fm_simulator_stats_json(sim: *const FmSimulator, out: *mut *mut c_char) -> c_int {
    guard(|| {
        let s = sim.as_ref().ok_or_else(null)?;
        let json = CString::new(s.0.stats().to_json()).map_err(|e| (FM_ERR_INTERNAL, e.to_string()))?;
        write_out(out, json.into_raw())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Probability that `n` leading-version advances trigger no reset at
/// reset probability 2^-`reset_exp`.
#[no_mangle]
pub extern "C" fn fm_no_reset_prob(n: f64, reset_exp: u32) -> f64 {
    no_reset_prob(n, reset_exp)
}

/// Probability that any interval of `interval_updates` advances passes
/// without a reset over `total_updates` advances.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fm_exhaustion_bound(
    total_updates: f64,
    interval_updates: f64,
    interval_count: f64,
    reset_exp: u32,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let q = ExhaustionQuery { total_updates, interval_updates, interval_count, reset_exp };
        let b = exhaustion_bound(&q).map_err(|e| (FM_ERR_INVALID_ARG, e.to_string()))?;
        write_out(out, b)
    })
}
