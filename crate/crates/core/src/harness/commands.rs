//! Experiment commands behind the CLI.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{dp_solve, dp_value_at, GridSpec, ValueGrid};
use crate::error::{Error, Result};
use crate::harness::problem::ProblemFile;
use crate::harness::record::{MethodTag, ResultRecord, Row};
use crate::lti::{chain_of_integrators, Disturbance, GaussianDisturbance, HyperRect, LtiSystem, OpenLoopPolicy, ReachAvoidQuery};
use crate::mvn::QuadConfig;
use crate::objective::{reach_avoid_probability, reach_avoid_probability_mc};
use crate::solvers::{maximize, Method, SolveResult, SolverConfig};

/// Command-line overrides of the problem file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Quadrature accuracy.
    pub eps: Option<f64>,
    pub seed: Option<u64>,
}

struct Settings {
    solver: SolverConfig,
    quad: QuadConfig,
    seed: u64,
    mc_samples: u64,
}

impl Settings {
    fn new(problem: &ProblemFile, opts: &RunOptions) -> Result<Self> {
        let seed = opts.seed.unwrap_or(problem.seed);
        let mut quad = problem.quadrature.clone();
        if let Some(eps) = opts.eps {
            quad.eps = eps;
        }
        quad.seed = seed;
        quad.validate()?;
        let solver = SolverConfig {
            seed,
            ..problem.solver.clone()
        };
        Ok(Self {
            solver,
            quad,
            seed,
            mc_samples: problem.mc_samples,
        })
    }

    fn for_point(&self, index: usize) -> Self {
        let seed = derive_seed(self.seed, index);
        Self {
            solver: SolverConfig {
                seed,
                ..self.solver.clone()
            },
            quad: QuadConfig {
                seed,
                ..self.quad.clone()
            },
            seed,
            mc_samples: self.mc_samples,
        }
    }
}

/// Seed of sweep point `index`; point 0 keeps the base seed.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn record(query: &ReachAvoidQuery, method: MethodTag, seed: u64) -> ResultRecord {
    ResultRecord {
        tool: "reachkit".into(),
        version: crate::VERSION.into(),
        method,
        state_dim: query.system.state_dim(),
        input_dim: query.system.input_dim(),
        horizon: query.horizon,
        x0: query.x0.clone(),
        probability: 0.0,
        err_est: 0.0,
        evals: 0,
        converged: true,
        seed,
        wall_time_s: 0.0,
        u_star: None,
    }
}

fn seconds(started: Instant) -> f64 {
    (started.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
}

fn ftbu(query: &ReachAvoidQuery, method: Method, s: &Settings) -> Result<SolveResult> {
    maximize(
        query,
        &SolverConfig {
            method,
            ..s.solver.clone()
        },
        &s.quad,
    )
}

fn from_solve(query: &ReachAvoidQuery, method: MethodTag, s: &Settings, r: SolveResult) -> ResultRecord {
    ResultRecord {
        probability: r.p_star.p,
        err_est: r.p_star.err_est,
        evals: r.evals,
        converged: r.converged,
        wall_time_s: r.wall_time,
        u_star: Some(r.u_star),
        ..record(query, method, s.seed)
    }
}

fn run_method(query: &ReachAvoidQuery, method: MethodTag, s: &Settings) -> Result<ResultRecord> {
    match method {
        MethodTag::Ds => Ok(from_solve(query, method, s, ftbu(query, Method::DirectSearch, s)?)),
        MethodTag::Sl => Ok(from_solve(query, method, s, ftbu(query, Method::SmoothLocal, s)?)),
        MethodTag::Mc => {
            // Monte-Carlo estimate at the direct-search optimizer.
            let started = Instant::now();
            let r = ftbu(query, Method::DirectSearch, s)?;
            let mc = reach_avoid_probability_mc(query, &OpenLoopPolicy(r.u_star.clone()), s.mc_samples, s.seed)?;
            Ok(ResultRecord {
                probability: mc.p_hat,
                err_est: mc.half_width_95,
                evals: r.evals,
                converged: r.converged,
                wall_time_s: seconds(started),
                u_star: Some(r.u_star),
                ..record(query, method, s.seed)
            })
        }
        MethodTag::Dp => Err(Error::InvalidArgument("dp is evaluated on a solved value grid".into())),
    }
}

fn dp_record(query: &ReachAvoidQuery, grid: &ValueGrid, seed: u64, solve_time: f64) -> Result<ResultRecord> {
    Ok(ResultRecord {
        probability: dp_value_at(grid, &query.x0)?,
        wall_time_s: solve_time,
        ..record(query, MethodTag::Dp, seed)
    })
}

fn solve_dp(problem: &ProblemFile, query: &ReachAvoidQuery) -> Result<(ValueGrid, f64)> {
    let started = Instant::now();
    let grid = dp_solve(query, &problem.grid_spec(query)?)?;
    Ok((grid, seconds(started)))
}

/// Solve the single-point problem with one method.
pub fn cmd_solve(problem: &ProblemFile, method: MethodTag, opts: &RunOptions) -> Result<ResultRecord> {
    if !problem.is_single_point() {
        return Err(Error::Schema("solve needs a single x0 point; use grid for sweeps".into()));
    }
    let s = Settings::new(problem, opts)?;
    let query = problem.query()?;
    match method {
        MethodTag::Dp => {
            let (grid, t) = solve_dp(problem, &query)?;
            dp_record(&query, &grid, s.seed, t)
        }
        m => run_method(&query, m, &s),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodTag,
    pub points: usize,
    pub mean_probability: f64,
    /// Points with a DP value above `eps_clamp`.
    pub compared: usize,
    /// Fraction of compared points with `(V - W) / V < 30%`.
    pub fraction_rel_err_below_30: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub points: usize,
    pub eps_clamp: f64,
    pub methods: Vec<MethodSummary>,
}

#[derive(Clone, Debug)]
pub struct GridOutput {
    /// Ordered by point index, then method.
    pub records: Vec<ResultRecord>,
    pub summary: GridSummary,
}

impl GridOutput {
    pub fn rows(&self) -> Vec<Row> {
        self.records.iter().map(ResultRecord::row).collect()
    }
}

/// Percentage relative error `(v - w) / v * 100`, defined for `v > eps`.
pub fn relative_error(v: f64, w: f64, eps: f64) -> Option<f64> {
    (v > eps).then(|| (v - w) / v * 100.0)
}

/// Fraction of pairs with `v > eps` whose relative error is below
/// `threshold` percent, and the number of such pairs.
pub fn relative_error_fraction(pairs: &[(f64, f64)], eps: f64, threshold: f64) -> (Option<f64>, usize) {
    let errs: Vec<f64> = pairs.iter().filter_map(|&(v, w)| relative_error(v, w, eps)).collect();
    if errs.is_empty() {
        return (None, 0);
    }
    let below = errs.iter().filter(|&&e| e < threshold).count();
    (Some(below as f64 / errs.len() as f64), errs.len())
}

/// Default sweep methods: both solvers, plus DP when the state dimension allows it.
pub fn default_grid_methods(problem: &ProblemFile) -> Result<Vec<MethodTag>> {
    let mut m = vec![MethodTag::Ds, MethodTag::Sl];
    let q = problem.query()?;
    if q.system.state_dim() <= crate::dp::MAX_DP_DIM && q.system.disturbance().as_gaussian().is_ok() {
        m.push(MethodTag::Dp);
    }
    Ok(m)
}

/// Evaluate every `x0` of the problem with every method.
pub fn cmd_grid(problem: &ProblemFile, methods: &[MethodTag], opts: &RunOptions) -> Result<GridOutput> {
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }
    let s = Settings::new(problem, opts)?;
    let base = problem.query()?;
    let points = problem.x0_points()?;
    let queries: Vec<ReachAvoidQuery> = points.iter().map(|p| base.with_x0(p.clone())).collect::<Result<_>>()?;

    let dp = if methods.contains(&MethodTag::Dp) {
        if base.system.state_dim() > crate::dp::MAX_DP_DIM {
            return Err(Error::DpDimension(base.system.state_dim()));
        }
        Some(solve_dp(problem, &base)?)
    } else {
        None
    };

    let per_point: Vec<Vec<ResultRecord>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let ps = s.for_point(i);
            methods
                .iter()
                .map(|&m| match (&dp, m) {
                    (Some((grid, t)), MethodTag::Dp) => dp_record(q, grid, ps.seed, *t),
                    _ => run_method(q, m, &ps),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let eps_clamp = s.solver.eps_clamp;
    let value_of = |point: &[ResultRecord], m: MethodTag| point.iter().find(|r| r.method == m).map(|r| r.probability);
    let summaries = methods
        .iter()
        .map(|&m| {
            let probs: Vec<f64> = per_point.iter().filter_map(|p| value_of(p, m)).collect();
            let pairs: Vec<(f64, f64)> = per_point
                .iter()
                .filter_map(|p| Some((value_of(p, MethodTag::Dp)?, value_of(p, m)?)))
                .collect();
            let (fraction, compared) = if dp.is_some() && m != MethodTag::Dp {
                relative_error_fraction(&pairs, eps_clamp, 30.0)
            } else {
                (None, 0)
            };
            MethodSummary {
                method: m,
                points: probs.len(),
                mean_probability: probs.iter().sum::<f64>() / probs.len().max(1) as f64,
                compared,
                fraction_rel_err_below_30: fraction,
            }
        })
        .collect();

    Ok(GridOutput {
        records: per_point.into_iter().flatten().collect(),
        summary: GridSummary {
            points: points.len(),
            eps_clamp,
            methods: summaries,
        },
    })
}

/// Chain-of-integrators timing study over state dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    /// Random initial states drawn uniformly from the target per dimension.
    pub points: usize,
    pub horizon: usize,
    pub ns: f64,
    pub noise_variance: f64,
    pub input_bound: f64,
    pub safe_half_width: f64,
    pub target_half_width: f64,
    pub methods: Vec<MethodTag>,
    pub solver: SolverConfig,
    pub quadrature: QuadConfig,
    pub dp: BenchGrid,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchGrid {
    pub state_spacing: f64,
    pub input_spacing: f64,
    pub disturbance_half_width: f64,
    pub disturbance_spacing: f64,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            state_spacing: 0.05,
            input_spacing: 0.1,
            disturbance_half_width: 0.5,
            disturbance_spacing: 0.05,
        }
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 3, 5, 10, 20, 40],
            points: 20,
            horizon: 10,
            ns: 0.1,
            noise_variance: 0.01,
            input_bound: 1.0,
            safe_half_width: 10.0,
            target_half_width: 5.0,
            methods: vec![MethodTag::Ds, MethodTag::Dp],
            solver: SolverConfig {
                eps_clamp: 0.01,
                ..SolverConfig::default()
            },
            quadrature: QuadConfig::default(),
            dp: BenchGrid::default(),
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn query(&self, n: usize, x0: Vec<f64>) -> Result<ReachAvoidQuery> {
        let (a, b) = chain_of_integrators(n, self.ns)?;
        let sys = LtiSystem::new(
            a,
            b,
            Disturbance::Gaussian(GaussianDisturbance::isotropic(n, self.noise_variance)?),
            HyperRect::cube(1, -self.input_bound, self.input_bound)?,
        )?;
        ReachAvoidQuery::new(
            sys,
            HyperRect::cube(n, -self.safe_half_width, self.safe_half_width)?,
            HyperRect::cube(n, -self.target_half_width, self.target_half_width)?,
            self.horizon,
            x0,
        )
    }

    fn grid_spec(&self, n: usize) -> Result<GridSpec> {
        let h = self.dp.disturbance_half_width;
        Ok(GridSpec::new(
            self.dp.state_spacing,
            self.dp.input_spacing,
            HyperRect::cube(n, -h, h)?,
            self.dp.disturbance_spacing,
        ))
    }

    /// Initial states of dimension `n`, reproducible from the seed.
    pub fn initial_states(&self, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(n as u64);
        let t = self.target_half_width;
        (0..self.points)
            .map(|_| (0..n).map(|_| rng.random_range(-t..=t)).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub method: MethodTag,
    pub points: usize,
    /// `ok`, or `infeasible` when the DP grid is refused.
    pub status: String,
    pub mean_probability: Option<f64>,
    pub mean_wall_time_s: Option<f64>,
}

impl BenchRow {
    pub fn header() -> Vec<String> {
        ["n", "method", "points", "status", "mean_probability", "mean_wall_time_s"]
            .into_iter()
            .map(String::from)
            .collect()
    }

    pub fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.n.to_string(),
            self.method.to_string(),
            self.points.to_string(),
            self.status.clone(),
            opt(self.mean_probability),
            opt(self.mean_wall_time_s),
        ]
    }
}

pub fn cmd_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.points == 0 || cfg.dims.is_empty() {
        return Err(Error::InvalidArgument("bench needs at least one dimension and one point".into()));
    }
    cfg.quadrature.validate()?;
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let mut rows = Vec::new();
    for &n in &cfg.dims {
        let states = cfg.initial_states(n);
        for &m in &methods {
            let row = match m {
                MethodTag::Dp => bench_dp(cfg, n, &states)?,
                _ => {
                    let s = Settings {
                        solver: SolverConfig {
                            seed: cfg.seed,
                            ..cfg.solver.clone()
                        },
                        quad: QuadConfig {
                            seed: cfg.seed,
                            ..cfg.quadrature.clone()
                        },
                        seed: cfg.seed,
                        mc_samples: 100_000,
                    };
                    let records: Vec<ResultRecord> = states
                        .par_iter()
                        .enumerate()
                        .map(|(i, x0)| run_method(&cfg.query(n, x0.clone())?, m, &s.for_point(i)))
                        .collect::<Result<_>>()?;
                    let k = records.len() as f64;
                    BenchRow {
                        n,
                        method: m,
                        points: records.len(),
                        status: "ok".into(),
                        mean_probability: Some(records.iter().map(|r| r.probability).sum::<f64>() / k),
                        mean_wall_time_s: Some(records.iter().map(|r| r.wall_time_s).sum::<f64>() / k),
                    }
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

fn bench_dp(cfg: &BenchConfig, n: usize, states: &[Vec<f64>]) -> Result<BenchRow> {
    let query = cfg.query(n, vec![0.0; n])?;
    let started = Instant::now();
    let infeasible = || BenchRow {
        n,
        method: MethodTag::Dp,
        points: states.len(),
        status: "infeasible".into(),
        mean_probability: None,
        mean_wall_time_s: None,
    };
    match dp_solve(&query, &cfg.grid_spec(n)?) {
        Ok(grid) => {
            let t = seconds(started);
            let values: Vec<f64> = states.iter().map(|x| dp_value_at(&grid, x)).collect::<Result<_>>()?;
            Ok(BenchRow {
                n,
                method: MethodTag::Dp,
                points: states.len(),
                status: "ok".into(),
                mean_probability: Some(values.iter().sum::<f64>() / values.len() as f64),
                mean_wall_time_s: Some(t),
            })
        }
        Err(Error::GridTooLarge { .. } | Error::DpDimension(_)) => Ok(infeasible()),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub spacing: f64,
    pub x0: Vec<f64>,
    pub dp_value: f64,
    pub ftbu: f64,
    pub ftbu_err_est: f64,
    /// False when the DP value lies below the open-loop lower bound by more
    /// than its quadrature error.
    pub valid: bool,
}

impl CertificateRow {
    pub fn header(n: usize) -> Vec<String> {
        std::iter::once("spacing".to_string())
            .chain((0..n).map(|i| format!("x0_{i}")))
            .chain(["dp_value", "ftbu", "ftbu_err_est", "valid"].into_iter().map(String::from))
            .collect()
    }

    pub fn fields(&self) -> Vec<String> {
        std::iter::once(self.spacing.to_string())
            .chain(self.x0.iter().map(f64::to_string))
            .chain([
                self.dp_value.to_string(),
                self.ftbu.to_string(),
                self.ftbu_err_est.to_string(),
                self.valid.to_string(),
            ])
            .collect()
    }
}

/// A DP value is consistent with the lower bound unless it falls below it
/// by more than the bound's error estimate.
pub fn certificate_valid(dp_value: f64, ftbu: f64, ftbu_err_est: f64) -> bool {
    dp_value + ftbu_err_est + 1e-9 >= ftbu
}

/// DP values at each `x0` for each state/input spacing, checked against
/// the direct-search lower bound.
pub fn cmd_certificate(problem: &ProblemFile, spacings: &[f64], opts: &RunOptions) -> Result<Vec<CertificateRow>> {
    if spacings.is_empty() {
        return Err(Error::InvalidArgument("certificate needs at least one spacing".into()));
    }
    let s = Settings::new(problem, opts)?;
    let base = problem.query()?;
    if base.system.state_dim() > crate::dp::MAX_DP_DIM {
        return Err(Error::DpDimension(base.system.state_dim()));
    }
    let points = problem.x0_points()?;
    let bounds: Vec<SolveResult> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| ftbu(&base.with_x0(p.clone())?, Method::DirectSearch, &s.for_point(i)))
        .collect::<Result<_>>()?;
    let base_spec = problem.grid_spec(&base)?;
    let mut rows = Vec::new();
    for &h in spacings {
        let spec = GridSpec {
            state_spacing: h,
            input_spacing: h,
            ..base_spec.clone()
        };
        let grid = dp_solve(&base, &spec)?;
        for (p, b) in points.iter().zip(&bounds) {
            let v = dp_value_at(&grid, p)?;
            rows.push(CertificateRow {
                spacing: h,
                x0: p.clone(),
                dp_value: v,
                ftbu: b.p_star.p,
                ftbu_err_est: b.p_star.err_est,
                valid: certificate_valid(v, b.p_star.p, b.p_star.err_est),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub quadrature: ResultRecord,
    pub mc: ResultRecord,
    pub delta: f64,
    /// `|delta| <= half_width + err_est`
    pub agree: bool,
}

/// Quadrature and Monte-Carlo estimates at the direct-search optimizer.
pub fn cmd_validate(problem: &ProblemFile, n_samples: Option<u64>, opts: &RunOptions) -> Result<Validation> {
    let s = Settings::new(problem, opts)?;
    let query = problem.query()?;
    let started = Instant::now();
    let r = ftbu(&query, Method::DirectSearch, &s)?;
    let u = OpenLoopPolicy(r.u_star.clone());
    let quad = reach_avoid_probability(&query, &u, &s.quad)?;
    let quad_record = ResultRecord {
        probability: quad.p,
        err_est: quad.err_est,
        evals: r.evals,
        converged: r.converged,
        wall_time_s: seconds(started),
        u_star: Some(r.u_star.clone()),
        ..record(&query, MethodTag::Ds, s.seed)
    };
    let started = Instant::now();
    let mc = reach_avoid_probability_mc(&query, &u, n_samples.unwrap_or(s.mc_samples), s.seed)?;
    let mc_record = ResultRecord {
        probability: mc.p_hat,
        err_est: mc.half_width_95,
        evals: mc.n_samples,
        wall_time_s: seconds(started),
        u_star: Some(r.u_star),
        ..record(&query, MethodTag::Mc, s.seed)
    };
    let delta = quad.p - mc.p_hat;
    Ok(Validation {
        agree: delta.abs() <= mc.half_width_95 + quad.err_est,
        delta,
        quadrature: quad_record,
        mc: mc_record,
    })
}
