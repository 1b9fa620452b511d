//! C ABI over the `worldline` solver.
//!
//! All objects are opaque handles created by `wl_*_new`/`wl_solve` and
//! released with the matching `wl_*_free`. Fallible calls return a
//! [`WlStatus`]; on failure a message is available from
//! [`wl_last_error_message`] on the calling thread. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use worldline::diagnostics::DiagnosticsReport;
use worldline::sbp::{regularize, Order, RegularizedOperator, SbpOperator};
use worldline::solver::{solve_report, Solution, SolveOptions};
use worldline::{ProblemConfig, WorldlineError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    NonConvergence = 4,
    SingularSystem = 5,
    DimensionMismatch = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WlOrder {
    Sbp21 = 0,
    Sbp42 = 1,
}

impl From<WlOrder> for Order {
    fn from(o: WlOrder) -> Self {
        match o {
            WlOrder::Sbp21 => Order::Sbp21,
            WlOrder::Sbp42 => Order::Sbp42,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WlExample {
    Free = 0,
    Linear = 1,
    Quartic = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WlBranch {
    Forward = 1,
    Backward = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WlProfile {
    TimeMeshVelocity = 0,
    ChargeT = 1,
    DeltaE = 2,
    DeltaGT = 3,
    DeltaGX = 4,
    HBvp = 5,
}

/// Problem configuration.
pub struct WlConfig(ProblemConfig);

/// Solver result together with the configuration it was computed for.
pub struct WlSolution {
    cfg: ProblemConfig,
    sol: Solution,
}

pub struct WlDiagnostics(DiagnosticsReport);

pub struct WlOperator {
    op: SbpOperator,
    reg: Option<RegularizedOperator>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &WorldlineError) -> WlStatus {
    match e {
        WorldlineError::InvalidConfig(_) | WorldlineError::Sbp(_) => WlStatus::InvalidConfig,
        WorldlineError::NonConvergence { .. } => WlStatus::NonConvergence,
        WorldlineError::SingularSystem => WlStatus::SingularSystem,
        WorldlineError::DimensionMismatch { .. } => WlStatus::DimensionMismatch,
        _ => WlStatus::Internal,
    }
}

fn fail(status: WlStatus, msg: impl Into<String>) -> WlStatus {
    set_error(msg);
    status
}

fn from_err(e: WorldlineError) -> WlStatus {
    fail(status_of(&e), e.to_string())
}

fn guard<F: FnOnce() -> WlStatus>(f: F) -> WlStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(WlStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn guard_value<T: Copy, F: FnOnce() -> T>(fallback: T, f: F) -> T {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(fallback)
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn copy_to(src: &[f64], buf: *mut f64, len: usize) -> WlStatus {
    if buf.is_null() {
        return fail(WlStatus::NullPointer, "output buffer is null");
    }
    if len < src.len() {
        return fail(
            WlStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} required", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    WlStatus::Ok
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn wl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON configuration.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wl_config_from_json(json: *const c_char, out: *mut *mut WlConfig) -> WlStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(WlStatus::NullPointer, "null argument");
        }
        let text = match CStr::from_ptr(json).to_str() {
            Ok(s) => s,
            Err(e) => return fail(WlStatus::InvalidArgument, format!("configuration is not UTF-8: {e}")),
        };
        match ProblemConfig::from_json(text) {
            Ok(cfg) => {
                write_out(out, WlConfig(cfg));
                WlStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// Built-in example configuration with `n` grid points.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wl_config_example(
    kind: WlExample,
    order: WlOrder,
    n: usize,
    out: *mut *mut WlConfig,
) -> WlStatus {
    guard(|| {
        if out.is_null() {
            return fail(WlStatus::NullPointer, "null argument");
        }
        let base = match kind {
            WlExample::Free => ProblemConfig::free_example(),
            WlExample::Linear => ProblemConfig::linear_example(),
            WlExample::Quartic => ProblemConfig::quartic_example(),
        };
        let cfg = base.with_order(order.into()).with_n(n);
        match cfg.validate() {
            Ok(()) => {
                write_out(out, WlConfig(cfg));
                WlStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn wl_config_free(cfg: *mut WlConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Solver settings. `grad_tol <= 0` and `max_iter == 0` select the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WlSolveOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Fall back to continuation in the potential strength when the
    /// direct Newton run stalls.
    pub homotopy: bool,
}

#[no_mangle]
pub extern "C" fn wl_solve_options_default() -> WlSolveOptions {
    let d = SolveOptions::default();
    WlSolveOptions {
        grad_tol: 0.0,
        max_iter: d.max_iter,
        homotopy: d.homotopy,
    }
}

/// Solves the configuration; `opts` may be NULL for the defaults. On
/// `NonConvergence` the best state is still returned in `out`.
///
/// # Safety
/// `cfg` must be a live handle, `opts` NULL or valid, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wl_solve(
    cfg: *const WlConfig,
    opts: *const WlSolveOptions,
    out: *mut *mut WlSolution,
) -> WlStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(WlStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let cfg = &(*cfg).0;
        let mut so = SolveOptions::default();
        if let Some(o) = opts.as_ref() {
            if o.grad_tol.is_nan() {
                return fail(WlStatus::InvalidArgument, "grad_tol is NaN");
            }
            if o.grad_tol > 0.0 {
                so.grad_tol = Some(o.grad_tol);
            }
            if o.max_iter > 0 {
                so.max_iter = o.max_iter;
            }
            so.homotopy = o.homotopy;
        }
        match solve_report(cfg, &so) {
            Ok(sol) => {
                let converged = sol.converged;
                let (iters, gn) = (sol.iterations, sol.grad_norm);
                write_out(out, WlSolution { cfg: cfg.clone(), sol });
                if converged {
                    WlStatus::Ok
                } else {
                    from_err(WorldlineError::NonConvergence {
                        iterations: iters,
                        grad_norm: gn,
                    })
                }
            }
            Err(e) => from_err(e),
        }
    })
}

/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_free(sol: *mut WlSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Grid size, or 0 for NULL.
///
/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_n(sol: *const WlSolution) -> usize {
    guard_value(0, || if sol.is_null() { 0 } else { (*sol).sol.state.n() })
}

/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_converged(sol: *const WlSolution) -> bool {
    guard_value(false, || !sol.is_null() && (*sol).sol.converged)
}

/// Final gradient norm, NaN for NULL.
///
/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_grad_norm(sol: *const WlSolution) -> f64 {
    guard_value(f64::NAN, || if sol.is_null() { f64::NAN } else { (*sol).sol.grad_norm })
}

/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_iterations(sol: *const WlSolution) -> usize {
    guard_value(0, || if sol.is_null() { 0 } else { (*sol).sol.iterations })
}

/// Copies `t` of the requested branch into `buf` (at least `n` values).
///
/// # Safety
/// `sol` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_copy_t(
    sol: *const WlSolution,
    branch: WlBranch,
    buf: *mut f64,
    len: usize,
) -> WlStatus {
    guard(|| {
        if sol.is_null() {
            return fail(WlStatus::NullPointer, "null solution");
        }
        let s = &(*sol).sol.state;
        copy_to(if branch == WlBranch::Forward { &s.t1 } else { &s.t2 }, buf, len)
    })
}

/// Copies `x` of the requested branch into `buf` (at least `n` values).
///
/// # Safety
/// `sol` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_copy_x(
    sol: *const WlSolution,
    branch: WlBranch,
    buf: *mut f64,
    len: usize,
) -> WlStatus {
    guard(|| {
        if sol.is_null() {
            return fail(WlStatus::NullPointer, "null solution");
        }
        let s = &(*sol).sol.state;
        copy_to(if branch == WlBranch::Forward { &s.x1 } else { &s.x2 }, buf, len)
    })
}

/// Copies the eight Lagrange multipliers into `buf`.
///
/// # Safety
/// `sol` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wl_solution_copy_lambda(sol: *const WlSolution, buf: *mut f64, len: usize) -> WlStatus {
    guard(|| {
        if sol.is_null() {
            return fail(WlStatus::NullPointer, "null solution");
        }
        copy_to(&(*sol).sol.state.lambda, buf, len)
    })
}

/// Evaluates all diagnostics on the forward branch of a solution.
///
/// # Safety
/// `sol` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wl_diagnostics_new(sol: *const WlSolution, out: *mut *mut WlDiagnostics) -> WlStatus {
    guard(|| {
        if sol.is_null() || out.is_null() {
            return fail(WlStatus::NullPointer, "null argument");
        }
        let s = &*sol;
        match DiagnosticsReport::from_state(&s.sol.state, &s.cfg) {
            Ok(r) => {
                write_out(out, WlDiagnostics(r));
                WlStatus::Ok
            }
            Err(e) => from_err(e),
        }
    })
}

/// # Safety
/// `diag` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_diagnostics_free(diag: *mut WlDiagnostics) {
    if !diag.is_null() {
        drop(Box::from_raw(diag));
    }
}

/// # Safety
/// `diag` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wl_diagnostics_copy(
    diag: *const WlDiagnostics,
    profile: WlProfile,
    buf: *mut f64,
    len: usize,
) -> WlStatus {
    guard(|| {
        if diag.is_null() {
            return fail(WlStatus::NullPointer, "null diagnostics");
        }
        let r = &(*diag).0;
        let src = match profile {
            WlProfile::TimeMeshVelocity => &r.time_mesh_velocity,
            WlProfile::ChargeT => &r.q_t,
            WlProfile::DeltaE => &r.delta_e,
            WlProfile::DeltaGT => &r.delta_g_t,
            WlProfile::DeltaGX => &r.delta_g_x,
            WlProfile::HBvp => &r.h_bvp,
        };
        copy_to(src, buf, len)
    })
}

/// Largest interior charge deviation, NaN for NULL.
///
/// # Safety
/// `diag` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_diagnostics_max_interior_delta_e(diag: *const WlDiagnostics) -> f64 {
    guard_value(f64::NAN, || if diag.is_null() { f64::NAN } else { (*diag).0.max_interior_delta_e() })
}

/// Charge deviation at the last grid point, NaN for NULL.
///
/// # Safety
/// `diag` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_diagnostics_endpoint_delta_e(diag: *const WlDiagnostics) -> f64 {
    guard_value(f64::NAN, || if diag.is_null() { f64::NAN } else { (*diag).0.endpoint_delta_e() })
}

/// Builds a classical operator, or its regularized extension when
/// `regularized` is true.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wl_operator_new(
    order: WlOrder,
    n: usize,
    dgamma: f64,
    regularized: bool,
    init_value: f64,
    out: *mut *mut WlOperator,
) -> WlStatus {
    guard(|| {
        if out.is_null() {
            return fail(WlStatus::NullPointer, "null argument");
        }
        match Order::from(order).build(n, dgamma) {
            Ok(op) => {
                let reg = regularized.then(|| regularize(&op, init_value));
                write_out(out, WlOperator { op, reg });
                WlStatus::Ok
            }
            Err(e) => from_err(e.into()),
        }
    })
}

/// # Safety
/// `op` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_operator_free(op: *mut WlOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Matrix dimension: `n`, or `n + 1` for a regularized operator.
///
/// # Safety
/// `op` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wl_operator_dim(op: *const WlOperator) -> usize {
    guard_value(0, || {
        if op.is_null() {
            0
        } else {
            let o = &*op;
            o.reg.as_ref().map_or(o.op.n, |r| r.n + 1)
        }
    })
}

fn row_major(m: &worldline::sbp::SbpOperator, reg: Option<&RegularizedOperator>, quadrature: bool) -> Vec<f64> {
    let mat = match (reg, quadrature) {
        (Some(r), false) => &r.dbar,
        (Some(r), true) => &r.hbar,
        (None, false) => &m.d,
        (None, true) => &m.h,
    };
    mat.transpose().as_slice().to_vec()
}

/// Copies the differentiation matrix row-major (`dim * dim` values).
///
/// # Safety
/// `op` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wl_operator_copy_d(op: *const WlOperator, buf: *mut f64, len: usize) -> WlStatus {
    guard(|| {
        if op.is_null() {
            return fail(WlStatus::NullPointer, "null operator");
        }
        let o = &*op;
        copy_to(&row_major(&o.op, o.reg.as_ref(), false), buf, len)
    })
}

/// Copies the quadrature matrix row-major (`dim * dim` values).
///
/// # Safety
/// `op` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wl_operator_copy_h(op: *const WlOperator, buf: *mut f64, len: usize) -> WlStatus {
    guard(|| {
        if op.is_null() {
            return fail(WlStatus::NullPointer, "null operator");
        }
        let o = &*op;
        copy_to(&row_major(&o.op, o.reg.as_ref(), true), buf, len)
    })
}
