//! C ABI for reachkit.
//!
//! Queries are opaque handles created from problem-file JSON and released
//! with [`rk_query_free`]. Every fallible function returns an [`RkStatus`];
//! on failure [`rk_last_error`] describes the problem. Outputs are written
//! only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use nalgebra::{DMatrix, DVector};
use reachkit::harness::ProblemFile;
use reachkit::mvn::mvn_box_probability;
use reachkit::objective::{reach_avoid_probability, reach_avoid_probability_mc};
use reachkit::solvers::{maximize, Method, SolverConfig};
use reachkit::{Error, GaussianVector, HyperRect, OpenLoopPolicy, QuadConfig, ReachAvoidQuery};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Schema = 3,
    Dimension = 4,
    InvalidArgument = 5,
    Numerical = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RkMethod {
    DirectSearch = 0,
    SmoothLocal = 1,
}

/// Opaque reach-avoid query with the solver and quadrature settings of its
/// problem file.
pub struct RkQuery {
    query: ReachAvoidQuery,
    solver: SolverConfig,
    quad: QuadConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(RkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Schema(_) => RkStatus::Schema,
            Error::Dimension(_) => RkStatus::Dimension,
            Error::InvalidArgument(_) | Error::InfeasibleInput(_) => RkStatus::InvalidArgument,
            _ => RkStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RkStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            RkStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            RkStatus::Panic
        }
    }
}

unsafe fn doubles<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn handle<'a>(q: *const RkQuery) -> Result<&'a RkQuery, Failure> {
    q.as_ref().ok_or_else(|| null("query"))
}

fn quad_config(base: &QuadConfig, eps: f64, seed: u64) -> QuadConfig {
    QuadConfig {
        eps: if eps > 0.0 { eps } else { base.eps },
        seed,
        ..base.clone()
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rk_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a problem file and stores a new handle in `*out`. The first `x0`
/// of the file is used.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rk_query_from_json(json: *const c_char, out: *mut *mut RkQuery) -> RkStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(RkStatus::InvalidUtf8, e.to_string()))?;
        let problem = ProblemFile::from_json(text)?;
        let handle = RkQuery {
            query: problem.query()?,
            solver: problem.solver.clone(),
            quad: problem.quadrature.clone(),
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `q` must come from [`rk_query_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rk_query_free(q: *mut RkQuery) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// State dimension, input dimension and horizon. Any output pointer may be null.
///
/// # Safety
/// `q` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn rk_query_dims(
    q: *const RkQuery,
    state_dim: *mut usize,
    input_dim: *mut usize,
    horizon: *mut usize,
) -> RkStatus {
    guard(|| {
        let q = handle(q)?;
        if let Some(p) = state_dim.as_mut() {
            *p = q.query.system.state_dim();
        }
        if let Some(p) = input_dim.as_mut() {
            *p = q.query.system.input_dim();
        }
        if let Some(p) = horizon.as_mut() {
            *p = q.query.horizon;
        }
        Ok(())
    })
}

/// Replaces the initial state.
///
/// # Safety
/// `q` must be a live handle and `x0` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rk_query_set_x0(q: *mut RkQuery, x0: *const f64, len: usize) -> RkStatus {
    guard(|| {
        let q = q.as_mut().ok_or_else(|| null("query"))?;
        let x0 = doubles(x0, len, "x0")?;
        q.query = q.query.with_x0(x0.to_vec())?;
        Ok(())
    })
}

/// Quadrature value of the reach-avoid probability for the stacked input
/// sequence `u` (length `m * N`). `eps <= 0` keeps the problem's accuracy.
///
/// # Safety
/// `q` must be a live handle, `u` point to `u_len` doubles, outputs valid.
#[no_mangle]
pub unsafe extern "C" fn rk_reach_probability(
    q: *const RkQuery,
    u: *const f64,
    u_len: usize,
    eps: f64,
    seed: u64,
    p_out: *mut f64,
    err_out: *mut f64,
) -> RkStatus {
    guard(|| {
        let q = handle(q)?;
        let u = doubles(u, u_len, "u")?;
        if p_out.is_null() || err_out.is_null() {
            return Err(null("output"));
        }
        let r = reach_avoid_probability(&q.query, &OpenLoopPolicy(u.to_vec()), &quad_config(&q.quad, eps, seed))?;
        *p_out = r.p;
        *err_out = r.err_est;
        Ok(())
    })
}

/// Monte-Carlo estimate and 95% half-width at `u`.
///
/// # Safety
/// As for [`rk_reach_probability`].
#[no_mangle]
pub unsafe extern "C" fn rk_mc_probability(
    q: *const RkQuery,
    u: *const f64,
    u_len: usize,
    n_samples: u64,
    seed: u64,
    p_out: *mut f64,
    half_width_out: *mut f64,
) -> RkStatus {
    guard(|| {
        let q = handle(q)?;
        let u = doubles(u, u_len, "u")?;
        if p_out.is_null() || half_width_out.is_null() {
            return Err(null("output"));
        }
        let r = reach_avoid_probability_mc(&q.query, &OpenLoopPolicy(u.to_vec()), n_samples, seed)?;
        *p_out = r.p_hat;
        *half_width_out = r.half_width_95;
        Ok(())
    })
}

/// Maximizes the probability over input sequences. `u_out` receives the
/// optimizer and must hold `m * N` doubles.
///
/// # Safety
/// `q` must be a live handle, `u_out` point to `u_len` writable doubles,
/// other outputs valid.
#[no_mangle]
pub unsafe extern "C" fn rk_solve(
    q: *const RkQuery,
    method: RkMethod,
    eps: f64,
    seed: u64,
    u_out: *mut f64,
    u_len: usize,
    p_out: *mut f64,
    err_out: *mut f64,
) -> RkStatus {
    guard(|| {
        let q = handle(q)?;
        let need = q.query.decision_dim();
        if u_len != need {
            return Err(Failure(RkStatus::Dimension, format!("u_out holds {u_len} values, need {need}")));
        }
        if u_out.is_null() || p_out.is_null() || err_out.is_null() {
            return Err(null("output"));
        }
        let cfg = SolverConfig {
            method: match method {
                RkMethod::DirectSearch => Method::DirectSearch,
                RkMethod::SmoothLocal => Method::SmoothLocal,
            },
            seed,
            ..q.solver.clone()
        };
        let r = maximize(&q.query, &cfg, &quad_config(&q.quad, eps, seed))?;
        slice::from_raw_parts_mut(u_out, u_len).copy_from_slice(&r.u_star);
        *p_out = r.p_star.p;
        *err_out = r.p_star.err_est;
        Ok(())
    })
}

/// `P(lower <= X <= upper)` for `X ~ N(mean, cov)` with `cov` row-major
/// `dim x dim`. Infinite bounds are allowed.
///
/// # Safety
/// `mean`, `lower`, `upper` must point to `dim` doubles, `cov` to `dim*dim`.
#[no_mangle]
pub unsafe extern "C" fn rk_mvn_box_probability(
    dim: usize,
    mean: *const f64,
    cov: *const f64,
    lower: *const f64,
    upper: *const f64,
    eps: f64,
    seed: u64,
    p_out: *mut f64,
    err_out: *mut f64,
) -> RkStatus {
    guard(|| {
        if dim == 0 {
            return Err(Failure(RkStatus::Dimension, "dim must be positive".into()));
        }
        let mean = doubles(mean, dim, "mean")?;
        let cov = doubles(cov, dim * dim, "cov")?;
        let lower = doubles(lower, dim, "lower")?;
        let upper = doubles(upper, dim, "upper")?;
        if p_out.is_null() || err_out.is_null() {
            return Err(null("output"));
        }
        let g = GaussianVector::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(dim, dim, cov))?;
        let region = HyperRect::new(lower.to_vec(), upper.to_vec())?;
        let r = mvn_box_probability(&g, &region, &quad_config(&QuadConfig::default(), eps, seed))?;
        *p_out = r.p;
        *err_out = r.err_est;
        Ok(())
    })
}
