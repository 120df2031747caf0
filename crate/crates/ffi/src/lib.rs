//! C ABI for the two-scale laboratory.
//!
//! Conventions:
//! * every fallible call returns a [`TsStatus`]; on failure a thread-local
//!   message is readable through [`ts_last_error_message`];
//! * stateful objects (coarse-graining schemes, thermodynamic tables) are
//!   opaque handles created by `*_new`/`*_build` and released by `*_free`;
//! * buffers are caller-allocated `double` arrays of the documented length;
//! * all functions are panic-safe at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use twoscale::coarse_grain::{BlockScheme, CoarseGrain, MacroVector};
use twoscale::macro_pde::{integrate_macro, solve_pde};
use twoscale::metrics::{h_minus1_sq, StepFunction};
use twoscale::operators::{LatticeDim, LatticeOps, MicroVector};
use twoscale::thermo::{cramer, CramerTable, GridSpec, Potential, PsiKTable};

/// Status codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    InvalidArgument = 1,
    NumericalError = 2,
    Panic = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &twoscale::Error) -> TsStatus {
    match err {
        twoscale::Error::DimensionMismatch { .. }
        | twoscale::Error::LatticeTooSmall(_)
        | twoscale::Error::InvalidScheme { .. }
        | twoscale::Error::Config(_)
        | twoscale::Error::NotMeanZero { .. }
        | twoscale::Error::OutOfTableRange { .. } => TsStatus::InvalidArgument,
        _ => TsStatus::NumericalError,
    }
}

/// Runs a fallible closure with panic containment and error capture.
fn guarded<F: FnOnce() -> Result<(), twoscale::Error>>(f: F) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsStatus::Ok,
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            TsStatus::Panic
        }
    }
}

/// Version string of the library; static storage, do not free.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent error on this thread; valid until the next
/// failing call on the same thread. Do not free.
#[no_mangle]
pub extern "C" fn ts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn slice_in<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_out<'a>(ptr: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

macro_rules! require {
    ($cond:expr, $msg:expr) => {
        if !$cond {
            set_error($msg);
            return TsStatus::InvalidArgument;
        }
    };
}

fn apply_op(
    n: usize,
    x: *const f64,
    out: *mut f64,
    op: impl Fn(&LatticeOps, &MicroVector) -> Result<MicroVector, twoscale::Error>,
) -> TsStatus {
    let (x, out) = unsafe {
        match (slice_in(x, n), slice_out(out, n)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                set_error("null pointer");
                return TsStatus::InvalidArgument;
            }
        }
    };
    guarded(|| {
        let ops = LatticeOps::new(LatticeDim::new(n)?);
        let y = op(&ops, &MicroVector::new(x.to_vec()))?;
        out.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// `out = A x` (scaled discrete Laplacian), periodic length-`n` vectors.
///
/// # Safety
/// `x` and `out` must point to `n` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_apply_a(n: usize, x: *const f64, out: *mut f64) -> TsStatus {
    apply_op(n, x, out, |ops, v| ops.apply_a(v))
}

/// `out = J x` (scaled discrete derivative).
///
/// # Safety
/// `x` and `out` must point to `n` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_apply_j(n: usize, x: *const f64, out: *mut f64) -> TsStatus {
    apply_op(n, x, out, |ops, v| ops.apply_j(v))
}

/// `out = A^{-1} x` on the mean-zero subspace; `x` must be mean-zero.
///
/// # Safety
/// `x` and `out` must point to `n` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_solve_a_inv(n: usize, x: *const f64, out: *mut f64) -> TsStatus {
    apply_op(n, x, out, |ops, v| ops.solve_a_inv(v))
}

/// Penalized quadratic form `(1/n) <A^{-1} x, x>` of a mean-zero vector.
///
/// # Safety
/// `x` must point to `n` doubles, `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn ts_quad_form_a_inv(n: usize, x: *const f64, out: *mut f64) -> TsStatus {
    let x = match slice_in(x, n) {
        Some(a) => a,
        None => {
            set_error("null pointer");
            return TsStatus::InvalidArgument;
        }
    };
    require!(!out.is_null(), "null output pointer");
    guarded(|| {
        let ops = LatticeOps::new(LatticeDim::new(n)?);
        let v = ops.quad_form_a_inv(&MicroVector::new(x.to_vec()))?;
        *out = v;
        Ok(())
    })
}

/// Squared `H^{-1}` norm of a mean-zero step function on mesh `1/len`.
///
/// # Safety
/// `w` must point to `len` doubles, `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn ts_h_minus1_sq(len: usize, w: *const f64, out: *mut f64) -> TsStatus {
    let w = match slice_in(w, len) {
        Some(a) => a,
        None => {
            set_error("null pointer");
            return TsStatus::InvalidArgument;
        }
    };
    require!(!out.is_null(), "null output pointer");
    guarded(|| {
        let v = h_minus1_sq(&StepFunction::new(w.to_vec()))?;
        *out = v;
        Ok(())
    })
}

/// Opaque coarse-graining handle for a fixed `(n, m)` scheme.
pub struct TsCoarseGrain {
    inner: CoarseGrain,
}

/// Creates a coarse-graining scheme with `n = k * m` sites and `m` blocks.
/// Returns null on failure (see [`ts_last_error_message`]).
#[no_mangle]
pub extern "C" fn ts_coarse_grain_new(n: usize, m: usize) -> *mut TsCoarseGrain {
    let built = catch_unwind(|| BlockScheme::new(n, m).and_then(CoarseGrain::new));
    match built {
        Ok(Ok(inner)) => Box::into_raw(Box::new(TsCoarseGrain { inner })),
        Ok(Err(e)) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            std::ptr::null_mut()
        }
    }
}

/// Releases a coarse-graining handle. Null is ignored.
///
/// # Safety
/// `handle` must be null or a pointer from [`ts_coarse_grain_new`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn ts_coarse_grain_free(handle: *mut TsCoarseGrain) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Block averages: `y[m] = P x[n]`.
///
/// # Safety
/// `handle` must be a live handle; `x` and `y` must point to `n` and `m`
/// doubles respectively.
#[no_mangle]
pub unsafe extern "C" fn ts_project(
    handle: *const TsCoarseGrain,
    x: *const f64,
    y: *mut f64,
) -> TsStatus {
    require!(!handle.is_null(), "null handle");
    let cg = &(*handle).inner;
    let scheme = cg.scheme();
    let (x, y) = match (slice_in(x, scheme.n()), slice_out(y, scheme.m())) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            set_error("null pointer");
            return TsStatus::InvalidArgument;
        }
    };
    guarded(|| {
        let p = cg.project_p(&MicroVector::new(x.to_vec()))?;
        y.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Block-constant lift: `x[n] = N P^t y[m]`.
///
/// # Safety
/// `handle` must be a live handle; `y` and `x` must point to `m` and `n`
/// doubles respectively.
#[no_mangle]
pub unsafe extern "C" fn ts_lift(
    handle: *const TsCoarseGrain,
    y: *const f64,
    x: *mut f64,
) -> TsStatus {
    require!(!handle.is_null(), "null handle");
    let cg = &(*handle).inner;
    let scheme = cg.scheme();
    let (y, x) = match (slice_in(y, scheme.m()), slice_out(x, scheme.n())) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            set_error("null pointer");
            return TsStatus::InvalidArgument;
        }
    };
    guarded(|| {
        let l = cg.lift_npt(&MacroVector::new(y.to_vec()))?;
        x.copy_from_slice(l.as_slice());
        Ok(())
    })
}

/// Opaque coarse-grained potential table.
pub struct TsPsiKTable {
    inner: PsiKTable,
}

/// Builds the `psi_K` table for the potential `x^2/2 + a cos(b x)` and
/// block size `k` on the working interval `[-m_max, m_max]` with mesh
/// `1/subdiv`. Returns null on failure.
#[no_mangle]
pub extern "C" fn ts_psi_k_build(
    a: f64,
    b: f64,
    k: usize,
    m_max: f64,
    subdiv: u32,
) -> *mut TsPsiKTable {
    let built = catch_unwind(|| {
        let pot = Potential::new(a, b)?;
        PsiKTable::build(&pot, k, GridSpec { m_max, subdiv })
    });
    match built {
        Ok(Ok(inner)) => Box::into_raw(Box::new(TsPsiKTable { inner })),
        Ok(Err(e)) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            std::ptr::null_mut()
        }
    }
}

/// Releases a table handle. Null is ignored.
///
/// # Safety
/// `handle` must be null or a pointer from [`ts_psi_k_build`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn ts_psi_k_free(handle: *mut TsPsiKTable) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Evaluates `psi_K, psi_K', psi_K''` at `m`; any output pointer may be null
/// to skip that value.
///
/// # Safety
/// `handle` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_psi_k_eval(
    handle: *const TsPsiKTable,
    m: f64,
    psi: *mut f64,
    dpsi: *mut f64,
    ddpsi: *mut f64,
) -> TsStatus {
    require!(!handle.is_null(), "null handle");
    let table = &(*handle).inner;
    guarded(|| {
        let (v, dv, ddv) = table.eval(m)?;
        if !psi.is_null() {
            *psi = v;
        }
        if !dpsi.is_null() {
            *dpsi = dv;
        }
        if !ddpsi.is_null() {
            *ddpsi = ddv;
        }
        Ok(())
    })
}

/// Evaluates the Cramer transform `phi, phi', phi''` of the potential
/// `x^2/2 + a cos(b x)` at `m` (direct solve, no table).
///
/// # Safety
/// Non-null outputs must be writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_cramer_eval(
    a: f64,
    b: f64,
    m: f64,
    phi: *mut f64,
    dphi: *mut f64,
    ddphi: *mut f64,
) -> TsStatus {
    guarded(|| {
        let pot = Potential::new(a, b)?;
        let p = cramer(&pot, m)?;
        if !phi.is_null() {
            *phi = p.phi;
        }
        if !dphi.is_null() {
            *dphi = p.dphi;
        }
        if !ddphi.is_null() {
            *ddphi = p.ddphi;
        }
        Ok(())
    })
}

/// Solves the limiting PDE `d zeta/dt = (phi'(zeta))'' + (phi'(zeta))'`
/// from `zeta0[mesh]` to `t_end`, writing the final profile into
/// `out[mesh]`. Profile values must stay within `[-m_max, m_max]`.
///
/// # Safety
/// `zeta0` and `out` must point to `mesh` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_solve_pde(
    a: f64,
    b: f64,
    mesh: usize,
    zeta0: *const f64,
    t_end: f64,
    m_max: f64,
    out: *mut f64,
) -> TsStatus {
    let (zeta0, out) = match (slice_in(zeta0, mesh), slice_out(out, mesh)) {
        (Some(z), Some(o)) => (z, o),
        _ => {
            set_error("null pointer");
            return TsStatus::InvalidArgument;
        }
    };
    guarded(|| {
        let pot = Potential::new(a, b)?;
        let table = CramerTable::build(&pot, GridSpec { m_max, subdiv: 64 })?;
        let sol = solve_pde(zeta0, t_end, &table, &[t_end], None)?;
        out.copy_from_slice(sol.profiles.last().expect("checkpointed solution"));
        Ok(())
    })
}

/// Integrates the macroscopic block ODE from `eta0[m]` to `t_end`, writing
/// the final profile into `out[m]`. The scheme and table fix the geometry.
///
/// # Safety
/// Both handles must be live; `eta0` and `out` must point to `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_integrate_macro(
    cg: *const TsCoarseGrain,
    table: *const TsPsiKTable,
    eta0: *const f64,
    t_end: f64,
    out: *mut f64,
) -> TsStatus {
    require!(!cg.is_null() && !table.is_null(), "null handle");
    let cg = &(*cg).inner;
    let table = &(*table).inner;
    let m = cg.scheme().m();
    let (eta0, out) = match (slice_in(eta0, m), slice_out(out, m)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            set_error("null pointer");
            return TsStatus::InvalidArgument;
        }
    };
    guarded(|| {
        let traj =
            integrate_macro(cg, table, &MacroVector::new(eta0.to_vec()), t_end, &[t_end], 1e-8)?;
        out.copy_from_slice(traj.profiles.last().expect("checkpointed trajectory").as_slice());
        Ok(())
    })
}

/// Runs the operator and coarse-graining identity checks for a scheme;
/// writes 1 into `out_pass` when every identity holds.
///
/// # Safety
/// `out_pass` must be a writable i32.
#[no_mangle]
pub unsafe extern "C" fn ts_verify(
    n: usize,
    m: usize,
    a: f64,
    b: f64,
    out_pass: *mut i32,
) -> TsStatus {
    require!(!out_pass.is_null(), "null output pointer");
    guarded(|| {
        let mut config = twoscale::cli::ExperimentConfig::default();
        config.model.a = a;
        config.model.b = b;
        let rep = twoscale::cli::verify_scheme(&config, n, m)?;
        *out_pass = i32::from(rep.all_pass);
        Ok(())
    })
}
