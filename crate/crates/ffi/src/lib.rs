//! C ABI for the demand-response policy engine.
//!
//! The interface is handle-based and JSON-in/JSON-out: an engine is created
//! from the same JSON configuration the `dcdr` CLI consumes, and results come
//! back as JSON documents. All functions return a [`DcdrStatus`]; on any
//! non-`Ok` status the caller can fetch a human-readable message with
//! [`dcdr_last_error_message`]. Strings returned to the caller are allocated
//! by this library and must be released with [`dcdr_string_free`].
//!
//! Thread safety: an engine may be shared across threads for `solve`/`sweep`
//! calls (they take `&self`), but creation and destruction must not race with
//! use. The last-error message is thread-local.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use libc::c_char;

use dcdr::config::{build_policy_context, fit_all, materialize, spec_for, RunConfig};
use dcdr::metrics::pareto_sweep;
use dcdr::policies::{solve_policy, PolicyContext, PolicySpec};

/// Result code for every FFI entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcdrStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration failed to parse, validate, or materialize.
    BadConfig = 3,
    /// The policy solve failed (solver error or unknown policy).
    SolveFailed = 4,
    /// The solve finished but the outcome violates its own constraints;
    /// the outcome JSON is still returned for inspection.
    Infeasible = 5,
    /// An internal error (serialization failure or panic).
    Internal = 6,
}

/// Opaque engine handle: a validated configuration with materialized traces,
/// fitted penalty models, and a ready-to-solve policy context.
pub struct DcdrEngine {
    config: RunConfig,
    ctx: PolicyContext,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into();
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DcdrStatus, msg: impl Into<String>) -> DcdrStatus {
    set_last_error(msg);
    status
}

/// Runs `body` behind a panic guard so unwinding never crosses the ABI.
fn guarded(body: impl FnOnce() -> DcdrStatus) -> DcdrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in engine".to_string());
            fail(DcdrStatus::Internal, msg)
        }
    }
}

/// Converts a borrowed C string argument, recording errors.
///
/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn arg_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, DcdrStatus> {
    if ptr.is_null() {
        return Err(fail(DcdrStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(DcdrStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn emit_string(out: *mut *mut c_char, value: String) -> DcdrStatus {
    match CString::new(value.replace('\0', " ")) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            DcdrStatus::Ok
        }
        Err(_) => fail(DcdrStatus::Internal, "output contained interior NUL"),
    }
}

/// Builds an engine from a JSON configuration (same schema as the CLI's
/// `--config` file). Synthetic traces are drawn from the config's seed and
/// penalty models are fitted eagerly, so construction can take a moment.
///
/// On success writes the new handle to `out` and returns `Ok`; the handle
/// must be released with [`dcdr_engine_free`].
///
/// # Safety
/// `config_json` must be null or a valid NUL-terminated string; `out` must be
/// a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn dcdr_engine_new(
    config_json: *const c_char,
    out: *mut *mut DcdrEngine,
) -> DcdrStatus {
    guarded(|| {
        if out.is_null() {
            return fail(DcdrStatus::NullArgument, "out is null");
        }
        let text = match arg_str(config_json, "config_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config: RunConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => return fail(DcdrStatus::BadConfig, format!("config parse error: {e}")),
        };
        if let Err(e) = config.validate() {
            return fail(DcdrStatus::BadConfig, e.to_string());
        }
        let build = || -> Result<DcdrEngine, String> {
            let data = materialize(&config, config.seed).map_err(|e| e.to_string())?;
            let models = fit_all(&config, &data, config.seed).map_err(|e| e.to_string())?;
            let fitted: Vec<_> = models.into_iter().map(|f| f.model).collect();
            let ctx = build_policy_context(&config, &data, &fitted).map_err(|e| e.to_string())?;
            Ok(DcdrEngine { config, ctx })
        };
        match build() {
            Ok(engine) => {
                *out = Box::into_raw(Box::new(engine));
                DcdrStatus::Ok
            }
            Err(e) => fail(DcdrStatus::BadConfig, e),
        }
    })
}

/// Releases an engine created by [`dcdr_engine_new`]. Null is a no-op.
///
/// # Safety
/// `engine` must be null or a pointer previously returned by
/// [`dcdr_engine_new`] that has not already been freed.
#[no_mangle]
pub unsafe extern "C" fn dcdr_engine_free(engine: *mut DcdrEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Solves one policy at one hyperparameter and writes the outcome as a JSON
/// document (adjustments, per-workload penalties, carbon accounting,
/// feasibility, solver diagnostics) to `out_json`.
///
/// Returns `Infeasible` when the policy itself reports an infeasible outcome;
/// the JSON is still written so the caller can inspect it.
///
/// # Safety
/// `engine` must be a live handle from [`dcdr_engine_new`]; `policy` must be
/// null or a valid NUL-terminated string; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcdr_engine_solve(
    engine: *const DcdrEngine,
    policy: *const c_char,
    hyperparameter: f64,
    out_json: *mut *mut c_char,
) -> DcdrStatus {
    guarded(|| {
        if engine.is_null() || out_json.is_null() {
            return fail(DcdrStatus::NullArgument, "engine or out_json is null");
        }
        let engine = &*engine;
        let policy = match arg_str(policy, "policy") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let spec = match spec_for(&engine.config, policy, hyperparameter) {
            Ok(s) => s,
            Err(e) => return fail(DcdrStatus::SolveFailed, e.to_string()),
        };
        let outcome = match solve_policy(&engine.ctx, &spec) {
            Ok(o) => o,
            Err(e) => return fail(DcdrStatus::SolveFailed, e.to_string()),
        };
        let feasible = outcome.feasible;
        let json = match serde_json::to_string_pretty(&outcome) {
            Ok(j) => j,
            Err(e) => return fail(DcdrStatus::Internal, e.to_string()),
        };
        let status = emit_string(out_json, json);
        if status == DcdrStatus::Ok && !feasible {
            return fail(
                DcdrStatus::Infeasible,
                format!("{policy} produced an infeasible outcome"),
            );
        }
        status
    })
}

/// Runs every policy grid in the configuration and writes the sweep result
/// as a JSON document (`points`: the carbon/penalty frontier, `outcomes`:
/// full per-solve outcomes, `errors`: failed grid points) to `out_json`.
///
/// # Safety
/// `engine` must be a live handle from [`dcdr_engine_new`]; `out_json` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn dcdr_engine_sweep(
    engine: *const DcdrEngine,
    out_json: *mut *mut c_char,
) -> DcdrStatus {
    guarded(|| {
        if engine.is_null() || out_json.is_null() {
            return fail(DcdrStatus::NullArgument, "engine or out_json is null");
        }
        let engine = &*engine;
        let grid: Vec<PolicySpec> = engine
            .config
            .policies
            .iter()
            .flat_map(|g| g.specs())
            .collect();
        let sweep = match pareto_sweep(&engine.ctx, &grid) {
            Ok(s) => s,
            Err(e) => return fail(DcdrStatus::SolveFailed, e.to_string()),
        };
        let json = match serde_json::to_string_pretty(&sweep) {
            Ok(j) => j,
            Err(e) => return fail(DcdrStatus::Internal, e.to_string()),
        };
        emit_string(out_json, json)
    })
}

/// Returns the message for the most recent error on this thread, or null if
/// none has occurred. The caller owns the string and must release it with
/// [`dcdr_string_free`].
#[no_mangle]
pub extern "C" fn dcdr_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a string pointer returned by this library that has not
/// already been freed.
#[no_mangle]
pub unsafe extern "C" fn dcdr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
