//! Maximization of the clamped log reach-avoid probability over `U ∈ 𝒰^N`.
//!
//! Two bound-constrained solvers share the [`Objective`] abstraction:
//!
//! * generating-set (compass) direct search polling `±e_i` on an adaptive mesh,
//! * projected-gradient ascent with central finite differences and a
//!   backtracking line search.
//!
//! Every evaluation of one solve uses the same quadrature seed, so the noisy
//! quadrature behaves as a deterministic surrogate of the true objective.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{HyperRect, OpenLoopPolicy, ReachAvoidQuery};
use crate::mvn::{QuadConfig, QuadResult};
use crate::objective::GaussianReachModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DirectSearch,
    SmoothLocal,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::DirectSearch => "ftbu-ds",
            Method::SmoothLocal => "ftbu-sl",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// `U = 0` clipped into the input box.
    Zero,
    /// Least-squares steering of the mean trajectory to the target center.
    LeastSquares,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    /// Probabilities below this are raised to it before taking logs.
    pub eps_clamp: f64,
    /// Initial mesh size; `None` means a quarter of the widest input range.
    pub initial_mesh: Option<f64>,
    pub mesh_tol: f64,
    pub max_evals: u64,
    pub expansion: f64,
    pub contraction: f64,
    /// Finite-difference step; `None` means `1e-3` times the widest input range.
    pub fd_step: Option<f64>,
    /// Projected-gradient norm below which the smooth solver stops.
    pub grad_tol: f64,
    /// A poll point replaces the incumbent only if its probability is higher
    /// by more than `noise_tol` times its error estimate.
    pub noise_tol: f64,
    /// Quadrature seed shared by every evaluation of a solve.
    pub seed: u64,
    pub initial_guess: InitialGuess,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::DirectSearch,
            eps_clamp: 0.01,
            initial_mesh: None,
            mesh_tol: 1e-4,
            max_evals: 5000,
            expansion: 2.0,
            contraction: 0.5,
            fd_step: None,
            grad_tol: 1e-6,
            noise_tol: 0.1,
            seed: 0,
            initial_guess: InitialGuess::Zero,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, bounds: &HyperRect) -> Result<()> {
        let mesh = self.initial_mesh(bounds);
        if !(self.eps_clamp > 0.0 && self.eps_clamp < 1.0) {
            return Err(Error::InvalidArgument(format!("eps_clamp must be in (0,1), got {}", self.eps_clamp)));
        }
        if !(mesh > 0.0) || !(self.mesh_tol > 0.0) || self.mesh_tol >= mesh {
            return Err(Error::InvalidArgument(format!(
                "need 0 < mesh_tol < initial_mesh, got {} and {mesh}",
                self.mesh_tol
            )));
        }
        if !(self.expansion > 1.0) || !(self.contraction > 0.0 && self.contraction < 1.0) {
            return Err(Error::InvalidArgument("expansion must exceed 1, contraction must be in (0,1)".into()));
        }
        if !(self.noise_tol >= 0.0) {
            return Err(Error::InvalidArgument("noise_tol must be nonnegative".into()));
        }
        if !(self.fd_step(bounds) > 0.0) || self.max_evals == 0 {
            return Err(Error::InvalidArgument("fd_step and max_evals must be positive".into()));
        }
        Ok(())
    }

    fn widest(bounds: &HyperRect) -> f64 {
        bounds.widths().into_iter().fold(0.0, f64::max)
    }

    pub fn initial_mesh(&self, bounds: &HyperRect) -> f64 {
        self.initial_mesh.unwrap_or(0.25 * Self::widest(bounds))
    }

    pub fn fd_step(&self, bounds: &HyperRect) -> f64 {
        self.fd_step.unwrap_or(1e-3 * Self::widest(bounds))
    }
}

/// One objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Value being maximized.
    pub log_value: f64,
    pub probability: f64,
    pub err_est: f64,
}

pub trait Objective {
    fn evaluate(&mut self, u: &[f64]) -> Result<Evaluation>;
}

impl<F: FnMut(&[f64]) -> Result<Evaluation>> Objective for F {
    fn evaluate(&mut self, u: &[f64]) -> Result<Evaluation> {
        self(u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub u_star: Vec<f64>,
    pub p_star: QuadResult,
    pub log_value: f64,
    pub evals: u64,
    pub wall_time: f64,
    pub converged: bool,
    /// `(evaluation index, best probability so far)` at every improvement.
    pub trace: Vec<(u64, f64)>,
}

struct Tracker<'a, O: Objective> {
    objective: &'a mut O,
    bounds: &'a HyperRect,
    evals: u64,
    best_x: Vec<f64>,
    best: Evaluation,
    trace: Vec<(u64, f64)>,
}

impl<'a, O: Objective> Tracker<'a, O> {
    fn start(objective: &'a mut O, bounds: &'a HyperRect, mut x0: Vec<f64>) -> Result<Self> {
        bounds.clip(&mut x0);
        let best = objective.evaluate(&x0)?;
        Ok(Self {
            objective,
            bounds,
            evals: 1,
            best_x: x0,
            best,
            trace: vec![(1, best.probability)],
        })
    }

    fn eval(&mut self, x: &[f64]) -> Result<Evaluation> {
        debug_assert!(self.bounds.contains(x));
        self.evals += 1;
        self.objective.evaluate(x)
    }

    fn accept(&mut self, x: Vec<f64>, e: Evaluation) {
        self.best_x = x;
        self.best = e;
        self.trace.push((self.evals, e.probability));
    }

    fn finish(self, started: Instant, converged: bool) -> SolveResult {
        SolveResult {
            u_star: self.best_x,
            p_star: QuadResult {
                p: self.best.probability,
                err_est: self.best.err_est,
                samples_used: 0,
            },
            log_value: self.best.log_value,
            evals: self.evals,
            wall_time: round_ms(started.elapsed().as_secs_f64()),
            converged,
            trace: self.trace,
        }
    }
}

fn round_ms(secs: f64) -> f64 {
    (secs * 1000.0).round() / 1000.0
}

fn saturated(e: &Evaluation, tol: f64) -> bool {
    1.0 - e.probability <= tol
}

/// Compass search with opportunistic polling in the order
/// `+e_0, -e_0, +e_1, …`. Poll points are clipped to `bounds`. Improvements
/// smaller than the quadrature noise (see [`SolverConfig::noise_tol`]) are
/// not accepted.
///
/// Stops when the mesh falls below `mesh_tol`, the evaluation budget is
/// spent (`converged = false`), or the incumbent probability is within
/// `saturation_tol` of 1.
pub fn direct_search<O: Objective>(
    objective: &mut O,
    bounds: &HyperRect,
    x0: Vec<f64>,
    cfg: &SolverConfig,
    saturation_tol: f64,
) -> Result<SolveResult> {
    cfg.validate(bounds)?;
    let started = Instant::now();
    let max_mesh = SolverConfig::widest(bounds);
    let mut mesh = cfg.initial_mesh(bounds);
    let mut t = Tracker::start(objective, bounds, x0)?;
    let dim = t.best_x.len();

    let converged = loop {
        if saturated(&t.best, saturation_tol) || mesh < cfg.mesh_tol {
            break true;
        }
        if t.evals >= cfg.max_evals {
            break false;
        }
        let mut improved = false;
        'poll: for i in 0..dim {
            for sign in [1.0, -1.0] {
                let mut cand = t.best_x.clone();
                cand[i] = (cand[i] + sign * mesh).clamp(bounds.lower()[i], bounds.upper()[i]);
                if cand[i] == t.best_x[i] {
                    continue;
                }
                if t.evals >= cfg.max_evals {
                    break 'poll;
                }
                let e = t.eval(&cand)?;
                if e.log_value > t.best.log_value
                    && e.probability - t.best.probability >= cfg.noise_tol * e.err_est
                {
                    t.accept(cand, e);
                    improved = true;
                    break 'poll;
                }
            }
        }
        mesh = if improved {
            (mesh * cfg.expansion).min(max_mesh)
        } else {
            mesh * cfg.contraction
        };
    };
    Ok(t.finish(started, converged))
}

/// Projected-gradient ascent with central differences (one-sided at active
/// bounds) and Armijo backtracking. Stops on a vanishing projected gradient
/// or an accepted step shorter than `mesh_tol`.
pub fn projected_gradient<O: Objective>(
    objective: &mut O,
    bounds: &HyperRect,
    x0: Vec<f64>,
    cfg: &SolverConfig,
    saturation_tol: f64,
) -> Result<SolveResult> {
    cfg.validate(bounds)?;
    let started = Instant::now();
    let h = cfg.fd_step(bounds);
    let mut t = Tracker::start(objective, bounds, x0)?;
    let dim = t.best_x.len();
    let mut step = cfg.initial_mesh(bounds);

    let converged = loop {
        if saturated(&t.best, saturation_tol) {
            break true;
        }
        if t.evals + 2 * dim as u64 > cfg.max_evals {
            break false;
        }

        let x = t.best_x.clone();
        let fx = t.best.log_value;
        let mut grad = vec![0.0; dim];
        for i in 0..dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] = (x[i] + h).min(bounds.upper()[i]);
            xm[i] = (x[i] - h).max(bounds.lower()[i]);
            let fp = if xp[i] == x[i] { fx } else { t.eval(&xp)?.log_value };
            let fm = if xm[i] == x[i] { fx } else { t.eval(&xm)?.log_value };
            let span = xp[i] - xm[i];
            grad[i] = if span > 0.0 { (fp - fm) / span } else { 0.0 };
        }

        let project = |s: f64| -> Vec<f64> {
            let mut c: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + s * gi).collect();
            bounds.clip(&mut c);
            c
        };
        let pg = project(1.0);
        let pg_norm = pg.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if pg_norm < cfg.grad_tol {
            break true;
        }

        let gmax = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        let mut s = step / gmax;
        let mut accepted = false;
        for _ in 0..30 {
            if t.evals >= cfg.max_evals {
                break;
            }
            let cand = project(s);
            let ascent: f64 = grad.iter().zip(cand.iter().zip(&x)).map(|(g, (c, xi))| g * (c - xi)).sum();
            if ascent <= 0.0 {
                break;
            }
            let e = t.eval(&cand)?;
            if e.log_value > fx && e.log_value >= fx + 1e-4 * ascent {
                t.accept(cand, e);
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break t.evals < cfg.max_evals;
        }
        let moved = t.best_x.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved < cfg.mesh_tol {
            break true;
        }
        step = 2.0 * moved;
    };
    Ok(t.finish(started, converged))
}

/// `log(max(r, eps_clamp))`
pub fn clamp_log(probability: f64, eps_clamp: f64) -> f64 {
    probability.max(eps_clamp).ln()
}

/// Clamped log of the quadrature value of the reach-avoid probability.
pub fn clamped_log_objective(
    query: &ReachAvoidQuery,
    u: &OpenLoopPolicy,
    eps_clamp: f64,
    quad_cfg: &QuadConfig,
) -> Result<f64> {
    let r = GaussianReachModel::new(query)?.probability(u, quad_cfg)?;
    Ok(clamp_log(r.p, eps_clamp))
}

/// Default starting point of the solvers.
pub fn initial_guess(query: &ReachAvoidQuery, kind: InitialGuess) -> Result<OpenLoopPolicy> {
    let bounds = query.stacked_input_box();
    let mut u = match kind {
        InitialGuess::Zero => vec![0.0; query.decision_dim()],
        InitialGuess::LeastSquares => least_squares_guess(query)?,
    };
    bounds.clip(&mut u);
    Ok(OpenLoopPolicy(u))
}

fn least_squares_guess(query: &ReachAvoidQuery) -> Result<Vec<f64>> {
    let concat = crate::lti::ConcatenatedDynamics::new(&query.system, query.horizon)?;
    let n = query.system.state_dim();
    let center = query.target.center();
    let noise_mean: Vec<f64> = match query.system.disturbance().as_gaussian() {
        Ok(g) => g.mean().iter().copied().collect(),
        Err(_) => vec![0.0; n],
    };
    let stacked_center = DVector::from_fn(n * query.horizon, |i, _| center[i % n]);
    let stacked_noise = DVector::from_fn(n * query.horizon, |i, _| noise_mean[i % n]);
    let rhs = stacked_center
        - &concat.a_bar * DVector::from_column_slice(&query.x0)
        - &concat.g_bar * stacked_noise;
    let svd = concat.h_bar.clone().svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("least-squares initial guess: {e}")))?;
    Ok(sol.iter().copied().collect())
}

/// Solve the open-loop reach-avoid problem for `query` with the method in `cfg`.
pub fn maximize(query: &ReachAvoidQuery, cfg: &SolverConfig, quad_cfg: &QuadConfig) -> Result<SolveResult> {
    let bounds = query.stacked_input_box();
    if !bounds.is_bounded() {
        return Err(Error::InvalidArgument("input box must be bounded".into()));
    }
    cfg.validate(&bounds)?;
    quad_cfg.validate()?;
    let x0 = initial_guess(query, cfg.initial_guess)?;

    if !query.safe.contains(&query.x0) {
        return Ok(SolveResult {
            u_star: x0.0,
            p_star: QuadResult::exact(0.0),
            log_value: clamp_log(0.0, cfg.eps_clamp),
            evals: 0,
            wall_time: 0.0,
            converged: true,
            trace: vec![(0, 0.0)],
        });
    }

    let model = GaussianReachModel::new(query)?;
    let quad = QuadConfig {
        seed: cfg.seed,
        ..quad_cfg.clone()
    };
    let mut samples = 0_u64;
    let mut objective = |u: &[f64]| -> Result<Evaluation> {
        let r = model.probability(&OpenLoopPolicy(u.to_vec()), &quad)?;
        samples += r.samples_used;
        Ok(Evaluation {
            log_value: clamp_log(r.p, cfg.eps_clamp),
            probability: r.p,
            err_est: r.err_est,
        })
    };
    let mut result = match cfg.method {
        Method::DirectSearch => direct_search(&mut objective, &bounds, x0.0, cfg, quad.eps)?,
        Method::SmoothLocal => projected_gradient(&mut objective, &bounds, x0.0, cfg, quad.eps)?,
    };
    // Sample count of the reported optimum.
    result.p_star.samples_used = model.probability(&OpenLoopPolicy(result.u_star.clone()), &quad)?.samples_used;
    Ok(result)
}

pub fn maximize_direct_search(query: &ReachAvoidQuery, cfg: &SolverConfig, quad_cfg: &QuadConfig) -> Result<SolveResult> {
    maximize(
        query,
        &SolverConfig {
            method: Method::DirectSearch,
            ..cfg.clone()
        },
        quad_cfg,
    )
}

pub fn maximize_smooth_local(query: &ReachAvoidQuery, cfg: &SolverConfig, quad_cfg: &QuadConfig) -> Result<SolveResult> {
    maximize(
        query,
        &SolverConfig {
            method: Method::SmoothLocal,
            ..cfg.clone()
        },
        quad_cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{Disturbance, GaussianDisturbance, LtiSystem};
    use nalgebra::DMatrix;

    fn quadratic(c: Vec<f64>) -> impl FnMut(&[f64]) -> Result<Evaluation> {
        move |u: &[f64]| {
            let v = -u.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            Ok(Evaluation {
                log_value: v,
                probability: v.exp(),
                err_est: 0.0,
            })
        }
    }

    fn unit_box(d: usize) -> HyperRect {
        HyperRect::cube(d, -1.0, 1.0).unwrap()
    }

    #[test]
    fn clamp_log_examples() {
        assert_eq!(clamp_log(0.0005, 0.001), 0.001_f64.ln());
        assert_eq!(clamp_log(1.0, 0.001), 0.0);
        assert!((clamp_log(0.5, 0.001) + 0.6931).abs() < 1e-4);
    }

    #[test]
    fn direct_search_finds_quadratic_optimum() {
        let c = vec![0.3, -0.55];
        let mut f = quadratic(c.clone());
        let cfg = SolverConfig::default();
        let r = direct_search(&mut f, &unit_box(2), vec![0.0, 0.0], &cfg, 0.0).unwrap();
        let dist = r.u_star.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist <= cfg.mesh_tol * 2f64.sqrt(), "dist {dist}, {:?}", r.u_star);
        assert!(r.converged);
    }

    #[test]
    fn projected_gradient_finds_quadratic_optimum() {
        let c = vec![0.3, -0.55];
        let mut f = quadratic(c.clone());
        let r = projected_gradient(&mut f, &unit_box(2), vec![0.0, 0.0], &SolverConfig::default(), 0.0).unwrap();
        let dist = r.u_star.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist <= 1e-3, "dist {dist}");
        assert!(r.converged);
    }

    #[test]
    fn optimum_on_the_boundary() {
        let mut f = quadratic(vec![2.0, 0.0]);
        let r = direct_search(&mut f, &unit_box(2), vec![0.0, 0.5], &SolverConfig::default(), 0.0).unwrap();
        assert_eq!(r.u_star[0], 1.0);
        let mut f = quadratic(vec![2.0, 0.0]);
        let r = projected_gradient(&mut f, &unit_box(2), vec![0.0, 0.5], &SolverConfig::default(), 0.0).unwrap();
        assert_eq!(r.u_star[0], 1.0);
        assert!(r.u_star[1].abs() < 1e-3);
    }

    #[test]
    fn plateau_start_is_returned_unchanged_by_gradient_solver() {
        let mut f = |_: &[f64]| -> Result<Evaluation> {
            Ok(Evaluation {
                log_value: clamp_log(1e-5, 0.01),
                probability: 1e-5,
                err_est: 1e-6,
            })
        };
        let x0 = vec![0.2, -0.4];
        let r = projected_gradient(&mut f, &unit_box(2), x0.clone(), &SolverConfig::default(), 0.0).unwrap();
        assert_eq!(r.u_star, x0);
        assert!(r.converged);
    }

    #[test]
    fn saturated_start_stops_immediately() {
        let mut f = |_: &[f64]| -> Result<Evaluation> {
            Ok(Evaluation {
                log_value: 0.0,
                probability: 1.0,
                err_est: 0.0,
            })
        };
        let r = direct_search(&mut f, &unit_box(3), vec![0.0; 3], &SolverConfig::default(), 1e-3).unwrap();
        assert_eq!(r.evals, 1);
        assert_eq!(r.u_star, vec![0.0; 3]);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let mut f = quadratic(vec![0.123, 0.456, -0.789]);
        let cfg = SolverConfig {
            max_evals: 10,
            ..SolverConfig::default()
        };
        let r = direct_search(&mut f, &unit_box(3), vec![0.0; 3], &cfg, 0.0).unwrap();
        assert!(!r.converged);
        assert!(r.evals <= 10);
    }

    #[test]
    fn rejects_bad_config() {
        let mut f = quadratic(vec![0.0]);
        let cfg = SolverConfig {
            mesh_tol: 10.0,
            ..SolverConfig::default()
        };
        assert!(direct_search(&mut f, &unit_box(1), vec![0.0], &cfg, 0.0).is_err());
        let cfg = SolverConfig {
            contraction: 1.5,
            ..SolverConfig::default()
        };
        assert!(direct_search(&mut f, &unit_box(1), vec![0.0], &cfg, 0.0).is_err());
    }

    fn scalar_query(input_box: HyperRect, target: HyperRect) -> ReachAvoidQuery {
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            Disturbance::Gaussian(GaussianDisturbance::isotropic(1, 0.1).unwrap()),
            input_box,
        )
        .unwrap();
        ReachAvoidQuery::new(sys, HyperRect::whole(1).unwrap(), target, 1, vec![0.0]).unwrap()
    }

    #[test]
    fn initial_guess_examples() {
        let q = scalar_query(HyperRect::cube(1, -1.0, 1.0).unwrap(), HyperRect::cube(1, -1.0, 1.0).unwrap());
        assert_eq!(initial_guess(&q, InitialGuess::Zero).unwrap().0, vec![0.0]);

        let q = scalar_query(HyperRect::cube(1, 1.0, 2.0).unwrap(), HyperRect::cube(1, -1.0, 1.0).unwrap());
        assert_eq!(initial_guess(&q, InitialGuess::Zero).unwrap().0, vec![1.0]);

        let wide = HyperRect::cube(1, -10.0, 10.0).unwrap();
        let q = scalar_query(wide, HyperRect::cube(1, 4.0, 6.0).unwrap());
        let u = initial_guess(&q, InitialGuess::LeastSquares).unwrap();
        assert!((u.0[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn solvers_on_single_step_query_center_the_target() {
        let q = scalar_query(HyperRect::cube(1, -1.0, 1.0).unwrap(), HyperRect::cube(1, 0.2, 0.8).unwrap());
        let quad = QuadConfig::default();
        for method in [Method::DirectSearch, Method::SmoothLocal] {
            let cfg = SolverConfig {
                method,
                ..SolverConfig::default()
            };
            let r = maximize(&q, &cfg, &quad).unwrap();
            assert!((r.u_star[0] - 0.5).abs() < 1e-2, "{method:?}: {:?}", r.u_star);
            let sd = 0.1_f64.sqrt();
            let want = crate::mvn::normal::interval(-0.3 / sd, 0.3 / sd);
            assert!((r.p_star.p - want).abs() < 1e-4);
        }
    }
}
