//! C ABI over the delayscale library.
//!
//! Objects cross the boundary as opaque handles created by `ds_*_new`-style
//! constructors and released by the matching `ds_*_free`. Every fallible call
//! returns a [`DsStatus`]; on failure a message is kept per thread and can be
//! copied out with [`ds_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use delayscale::config::RunConfig;
use delayscale::controller::{Controller, ControllerState, Feedback};
use delayscale::model::{Output, PlantModel};
use delayscale::sim::{csv_header, simulate, RunStatus, SimResult};
use delayscale::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    SynthesisFailure = 4,
    BlowUp = 5,
    NumericFailure = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A plant, its certified gains and the controller, built from a run config.
pub struct DsDesign {
    config: RunConfig,
    model: PlantModel,
    controller: Controller,
}

/// A finished (or halted) closed-loop simulation.
pub struct DsResult {
    result: SimResult,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> DsStatus {
    match e {
        Error::SynthesisFailure { .. } => DsStatus::SynthesisFailure,
        Error::BlowUp { .. } => DsStatus::BlowUp,
        Error::NumericFailure { .. } => DsStatus::NumericFailure,
        Error::InvalidSpec(_) => DsStatus::InvalidArgument,
        _ => DsStatus::Config,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (DsStatus, String)>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null() -> (DsStatus, String) {
    (DsStatus::NullPointer, "null pointer argument".into())
}

/// Copies `text` with a terminating NUL into `buf`; `needed` always receives
/// the full size including the NUL.
unsafe fn copy_out(text: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), (DsStatus, String)> {
    let len = text.len() + 1;
    if !needed.is_null() {
        *needed = len;
    }
    if buf.is_null() || cap < len {
        return Err((DsStatus::BufferTooSmall, format!("buffer needs {len} bytes")));
    }
    ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit). Returns the full message length in bytes
/// excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ds_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = e.len().min(cap - 1);
            ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a design from a run-config JSON document: the plant, the gains
/// (synthesized, inline or from an artifact path) and the controller.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_design_new(config_json: *const c_char, out: *mut *mut DsDesign) -> DsStatus {
    guard(|| {
        if config_json.is_null() || out.is_null() {
            return Err(null());
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|e| (DsStatus::InvalidArgument, format!("config is not UTF-8: {e}")))?;
        let config = RunConfig::from_json(text).map_err(lib_err)?;
        let (model, env) = config.plant().map_err(lib_err)?;
        let gains = config.gains(&env, model.n()).map_err(lib_err)?;
        let controller = config.controller(&model, &env, gains).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DsDesign { config, model, controller }));
        Ok(())
    })
}

/// Releases a design; null is ignored.
///
/// # Safety
/// `design` must be null or a handle from [`ds_design_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_design_free(design: *mut DsDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Plant order `n` and the length of the controller state vector,
/// `(n - 1) + 4` laid out as `[x̂_2..x̂_n, ζ, r, r_u, θ̂]`.
///
/// # Safety
/// `design` must be a live handle; the out pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ds_design_dims(design: *const DsDesign, n: *mut usize, state_len: *mut usize) -> DsStatus {
    guard(|| {
        let d = design.as_ref().ok_or_else(null)?;
        let order = d.controller.n();
        if !n.is_null() {
            *n = order;
        }
        if !state_len.is_null() {
            *state_len = order + 3;
        }
        Ok(())
    })
}

/// Writes the gains artifact JSON into `buf` (NUL terminated). Fails with
/// `BufferTooSmall` when `cap` is short; `needed` always receives the size
/// including the NUL.
///
/// # Safety
/// `design` must be a live handle; `buf` null or `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ds_design_gains_json(
    design: *const DsDesign,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> DsStatus {
    guard(|| {
        let d = design.as_ref().ok_or_else(null)?;
        let text = serde_json::to_string(d.controller.gains()).map_err(|e| (DsStatus::Config, e.to_string()))?;
        copy_out(&text, buf, cap, needed)
    })
}

/// Number of values written by [`ds_controller_step`]: the state derivative
/// followed by `u` and `ũ`.
///
/// # Safety
/// `design` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ds_controller_step_len(design: *const DsDesign) -> usize {
    design.as_ref().map_or(0, |d| d.controller.n() + 5)
}

/// Evaluates the controller at `state` with measured outputs `(y1, yn)`.
/// Writes `[x̂̇_2..x̂̇_n, ζ̇, ṙ, ṙ_u, θ̂̇, u, ũ]` into `out`.
///
/// # Safety
/// `state` must point to `state_len` doubles and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_controller_step(
    design: *const DsDesign,
    state: *const f64,
    state_len: usize,
    y1: f64,
    yn: f64,
    out: *mut f64,
    out_len: usize,
) -> DsStatus {
    guard(|| {
        let d = design.as_ref().ok_or_else(null)?;
        if state.is_null() || out.is_null() {
            return Err(null());
        }
        let n = d.controller.n();
        if state_len != n + 3 || out_len < n + 5 {
            return Err((DsStatus::InvalidArgument, format!("state needs {} values and out at least {}", n + 3, n + 5)));
        }
        let s = std::slice::from_raw_parts(state, state_len);
        let cs = ControllerState { xhat: s[..n - 1].to_vec(), zeta: s[n - 1], r: s[n], r_u: s[n + 1], theta_hat: s[n + 2] };
        cs.validate(n, d.controller.params().tuning.a_theta).map_err(lib_err)?;
        let dv = d.controller.step(&cs, Output { x1: y1, xn: yn }).map_err(lib_err)?;
        let o = std::slice::from_raw_parts_mut(out, out_len);
        o[..n - 1].copy_from_slice(&dv.xhat_dot);
        o[n - 1..n + 5].copy_from_slice(&[dv.zeta_dot, dv.r_dot, dv.r_u_dot, dv.theta_hat_dot, dv.u, dv.u_tilde]);
        Ok(())
    })
}

/// Runs the closed loop with the config's `sim` section. A run that halts
/// still yields a result; inspect it with [`ds_result_status`].
///
/// # Safety
/// `design` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_simulate(design: *const DsDesign, out: *mut *mut DsResult) -> DsStatus {
    guard(|| {
        let d = design.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        *out = ptr::null_mut();
        let flipped = d.controller.with_flipped_u_tilde();
        let fb: &dyn Feedback = if d.config.feedback.flip_u_tilde { &flipped } else { &d.controller };
        let result = simulate(&d.model, fb, &d.config.sim).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DsResult { result }));
        Ok(())
    })
}

/// Releases a result; null is ignored.
///
/// # Safety
/// `result` must be null or a handle from [`ds_simulate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_result_free(result: *mut DsResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// `Ok` for a completed run, `BlowUp` or `NumericFailure` for a halted one.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ds_result_status(result: *const DsResult) -> DsStatus {
    match result.as_ref() {
        None => DsStatus::NullPointer,
        Some(r) => match &r.result.status {
            RunStatus::Completed => DsStatus::Ok,
            RunStatus::BlowUp { .. } => DsStatus::BlowUp,
            RunStatus::NumericFailure { .. } => DsStatus::NumericFailure,
        },
    }
}

/// Number of recorded rows and values per row (trajectory-CSV column order,
/// without diagnostics).
///
/// # Safety
/// `result` must be a live handle; the out pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ds_result_shape(result: *const DsResult, rows: *mut usize, width: *mut usize) -> DsStatus {
    guard(|| {
        let r = &result.as_ref().ok_or_else(null)?.result;
        if !rows.is_null() {
            *rows = r.rows.len();
        }
        if !width.is_null() {
            *width = csv_header(r.n, r.n_psi, false).len();
        }
        Ok(())
    })
}

/// Copies row `index` into `out`.
///
/// # Safety
/// `result` must be a live handle and `out` point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_result_row(result: *const DsResult, index: usize, out: *mut f64, out_len: usize) -> DsStatus {
    guard(|| {
        let r = &result.as_ref().ok_or_else(null)?.result;
        if out.is_null() {
            return Err(null());
        }
        let row = r
            .rows
            .get(index)
            .ok_or_else(|| (DsStatus::InvalidArgument, format!("row {index} of {}", r.rows.len())))?;
        let v = row.values();
        if out_len < v.len() {
            return Err((DsStatus::BufferTooSmall, format!("row needs {} values", v.len())));
        }
        std::slice::from_raw_parts_mut(out, v.len()).copy_from_slice(&v);
        Ok(())
    })
}
