//! System model: stochastic LTI dynamics, axis-aligned sets, reach-avoid
//! queries and the stacked (concatenated) representation of an N-step
//! trajectory.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvn::GaussianVector;

/// Axis-aligned hyper-rectangle `{ x : lower <= x <= upper }`.
///
/// Bounds may be infinite. A coordinate with `lower > upper` makes the set
/// empty; that is allowed so that "unreachable" targets can be expressed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRect", into = "RawRect")]
pub struct HyperRect {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// JSON form of a box: `null` stands for an infinite bound.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRect {
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
}

impl TryFrom<RawRect> for HyperRect {
    type Error = Error;

    fn try_from(raw: RawRect) -> Result<Self> {
        let lower = raw.lower.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect();
        let upper = raw.upper.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
        Self::new(lower, upper)
    }
}

impl From<HyperRect> for RawRect {
    fn from(r: HyperRect) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            lower: r.lower.into_iter().map(finite).collect(),
            upper: r.upper.into_iter().map(finite).collect(),
        }
    }
}

impl HyperRect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "box lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("box dimension must be positive".into()));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("box bounds must not be NaN".into()));
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^dim`
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// The whole space `R^dim`.
    pub fn whole(dim: usize) -> Result<Self> {
        Self::cube(dim, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l > u)
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Componentwise `self ⊆ other` for nonempty boxes.
    pub fn is_subset_of(&self, other: &HyperRect) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| other.lower[i] <= self.lower[i] && self.upper[i] <= other.upper[i])
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Midpoint per coordinate; a finite bound stands in when the other one is
    /// infinite, and 0 when both are.
    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l,
                (false, true) => u,
                (false, false) => 0.0,
            })
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    /// Shift both bounds by `offset`.
    pub fn translated(&self, offset: &[f64]) -> HyperRect {
        HyperRect {
            lower: self.lower.iter().zip(offset).map(|(l, o)| l + o).collect(),
            upper: self.upper.iter().zip(offset).map(|(u, o)| u + o).collect(),
        }
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &HyperRect) -> HyperRect {
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        lower.extend_from_slice(&other.lower);
        upper.extend_from_slice(&other.upper);
        HyperRect { lower, upper }
    }
}

/// A user-supplied disturbance distribution for the Monte-Carlo path.
pub trait DisturbanceSampler: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]);

    /// Characteristic function `E[exp(j αᵀ w)]`, when known in closed form.
    fn characteristic_function(&self, _alpha: &[f64]) -> Option<Complex64> {
        None
    }
}

/// `w ~ N(mean, covariance)` with a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct GaussianDisturbance {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianDisturbance {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::Dimension(format!(
                "disturbance covariance is {}x{}, mean has {n} entries",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let scale = covariance.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument("disturbance covariance is not symmetric".into()));
                }
            }
        }
        let min_eig = covariance.clone().symmetric_eigenvalues().min();
        if min_eig.is_nan() || min_eig <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "disturbance covariance must be positive definite (min eigenvalue {min_eig:e})"
            )));
        }
        let chol = Cholesky::new(covariance.clone())
            .ok_or(Error::NotPositiveDefinite { pivot: 0, dim: n })?
            .l();
        Ok(Self { mean, covariance, chol })
    }

    /// `N(0, variance · I_n)`
    pub fn isotropic(n: usize, variance: f64) -> Result<Self> {
        Self::new(DVector::zeros(n), DMatrix::identity(n, n) * variance)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let n = self.dim();
        let mut z = [0.0_f64; 16];
        let mut z_heap;
        let z: &mut [f64] = if n <= 16 {
            &mut z[..n]
        } else {
            z_heap = vec![0.0; n];
            &mut z_heap
        };
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for i in 0..n {
            let mut acc = self.mean[i];
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                acc += self.chol[(i, k)] * zk;
            }
            out[i] = acc;
        }
    }

    pub fn characteristic_function(&self, alpha: &[f64]) -> Complex64 {
        let a = DVector::from_column_slice(alpha);
        let phase = a.dot(&self.mean);
        let quad = (self.covariance.transpose() * &a).dot(&a);
        Complex64::new(-0.5 * quad, phase).exp()
    }
}

/// Independent uniform coordinates on `[center - half_width, center + half_width]`.
#[derive(Clone, Debug)]
pub struct UniformDisturbance {
    center: Vec<f64>,
    half_width: Vec<f64>,
}

impl UniformDisturbance {
    pub fn new(center: Vec<f64>, half_width: Vec<f64>) -> Result<Self> {
        if center.len() != half_width.len() || center.is_empty() {
            return Err(Error::Dimension("uniform disturbance center/half-width".into()));
        }
        if half_width.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidArgument("uniform half-widths must be positive".into()));
        }
        Ok(Self { center, half_width })
    }
}

impl DisturbanceSampler for UniformDisturbance {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let unit = Uniform::new(-1.0, 1.0).expect("valid range");
        for ((o, c), h) in out.iter_mut().zip(&self.center).zip(&self.half_width) {
            *o = c + h * unit.sample(rng);
        }
    }

    fn characteristic_function(&self, alpha: &[f64]) -> Option<Complex64> {
        let mut acc = Complex64::new(1.0, 0.0);
        for ((a, c), h) in alpha.iter().zip(&self.center).zip(&self.half_width) {
            let t = a * h;
            let sinc = if t.abs() < 1e-8 { 1.0 - t * t / 6.0 } else { t.sin() / t };
            acc *= Complex64::from_polar(sinc, a * c);
        }
        Some(acc)
    }
}

#[derive(Clone, Debug)]
pub enum Disturbance {
    Gaussian(GaussianDisturbance),
    Sampler(Arc<dyn DisturbanceSampler>),
}

impl Disturbance {
    pub fn dim(&self) -> usize {
        match self {
            Disturbance::Gaussian(g) => g.dim(),
            Disturbance::Sampler(s) => s.dim(),
        }
    }

    pub fn as_gaussian(&self) -> Result<&GaussianDisturbance> {
        match self {
            Disturbance::Gaussian(g) => Ok(g),
            Disturbance::Sampler(_) => Err(Error::NonGaussian),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        match self {
            Disturbance::Gaussian(g) => g.sample(rng, out),
            Disturbance::Sampler(s) => s.sample(rng, out),
        }
    }

    pub fn characteristic_function(&self, alpha: &[f64]) -> Result<Complex64> {
        match self {
            Disturbance::Gaussian(g) => Ok(g.characteristic_function(alpha)),
            Disturbance::Sampler(s) => s
                .characteristic_function(alpha)
                .ok_or(Error::NoCharacteristicFunction),
        }
    }
}

/// `x_{k+1} = A x_k + B u_k + w_k`, `u_k ∈ input_box`.
#[derive(Clone, Debug)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    disturbance: Disturbance,
    input_box: HyperRect,
}

impl LtiSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        disturbance: Disturbance,
        input_box: HyperRect,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!("A must be square and nonempty, got {}x{}", n, a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B is {}x{}, expected {n} rows", b.nrows(), b.ncols())));
        }
        if input_box.dim() != b.ncols() {
            return Err(Error::Dimension(format!(
                "input box has dimension {}, B has {} columns",
                input_box.dim(),
                b.ncols()
            )));
        }
        if input_box.is_empty() {
            return Err(Error::InvalidArgument("input box must be nonempty".into()));
        }
        if disturbance.dim() != n {
            return Err(Error::Dimension(format!(
                "disturbance has dimension {}, state has {n}",
                disturbance.dim()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("A and B must be finite".into()));
        }
        Ok(Self { a, b, disturbance, input_box })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn disturbance(&self) -> &Disturbance {
        &self.disturbance
    }

    pub fn input_box(&self) -> &HyperRect {
        &self.input_box
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// One step of the dynamics with an explicit disturbance realization.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        let m = self.input_dim();
        for i in 0..n {
            let mut acc = w[i];
            for j in 0..n {
                acc += self.a[(i, j)] * x[j];
            }
            for j in 0..m {
                acc += self.b[(i, j)] * u[j];
            }
            out[i] = acc;
        }
    }
}

/// Discrete-time chain of integrators with sampling parameter `ns`:
/// `A[i][j] = ns^(j-i)/(j-i)!` for `j >= i`, `B[i] = ns^(n-i)/(n-i)!`
/// (1-indexed rows). Returns `(A, B)`.
pub fn chain_of_integrators(n: usize, ns: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("chain of integrators needs n >= 1".into()));
    }
    if !(ns > 0.0) || !ns.is_finite() {
        return Err(Error::InvalidArgument(format!("sampling parameter must be positive, got {ns}")));
    }
    // coeff[k] = ns^k / k!
    let mut coeff = vec![1.0_f64; n + 1];
    for k in 1..=n {
        coeff[k] = coeff[k - 1] * ns / k as f64;
    }
    let a = DMatrix::from_fn(n, n, |i, j| if j >= i { coeff[j - i] } else { 0.0 });
    let b = DMatrix::from_fn(n, 1, |i, _| coeff[n - i]);
    Ok((a, b))
}

/// Stacked trajectory map `X = Ā x₀ + H̄ U + Ḡ W` over a horizon of N steps,
/// where row-block k (1-based) of `X` holds `x_k`.
#[derive(Clone, Debug)]
pub struct ConcatenatedDynamics {
    pub a_bar: DMatrix<f64>,
    pub h_bar: DMatrix<f64>,
    pub g_bar: DMatrix<f64>,
    pub horizon: usize,
    n: usize,
    m: usize,
}

impl ConcatenatedDynamics {
    pub fn new(system: &LtiSystem, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let n = system.state_dim();
        let m = system.input_dim();
        let a = system.a();
        let b = system.b();

        let mut powers = Vec::with_capacity(horizon + 1);
        powers.push(DMatrix::<f64>::identity(n, n));
        for k in 1..=horizon {
            powers.push(a * &powers[k - 1]);
        }
        let pb: Vec<DMatrix<f64>> = powers.iter().map(|p| p * b).collect();

        let mut a_bar = DMatrix::zeros(n * horizon, n);
        let mut h_bar = DMatrix::zeros(n * horizon, m * horizon);
        let mut g_bar = DMatrix::zeros(n * horizon, n * horizon);
        for k in 1..=horizon {
            let row = (k - 1) * n;
            a_bar.view_mut((row, 0), (n, n)).copy_from(&powers[k]);
            for j in 0..k {
                h_bar.view_mut((row, j * m), (n, m)).copy_from(&pb[k - 1 - j]);
                g_bar.view_mut((row, j * n), (n, n)).copy_from(&powers[k - 1 - j]);
            }
        }
        Ok(Self { a_bar, h_bar, g_bar, horizon, n, m })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn stacked_dim(&self) -> usize {
        self.n * self.horizon
    }

    /// `Ā x₀ + H̄ U + Ḡ W`
    pub fn apply(&self, x0: &[f64], u: &[f64], w: &[f64]) -> DVector<f64> {
        &self.a_bar * DVector::from_column_slice(x0)
            + &self.h_bar * DVector::from_column_slice(u)
            + &self.g_bar * DVector::from_column_slice(w)
    }
}

/// Mean and covariance of the stacked state `X` under a Gaussian disturbance:
/// `m_X = Ḡ(1 ⊗ m) + Ā x₀ + H̄ U` and `Σ_X = Ḡ (I_N ⊗ Σ) Ḡᵀ`.
pub fn mean_covariance_of_x(
    concat: &ConcatenatedDynamics,
    system: &LtiSystem,
    x0: &[f64],
    u: &OpenLoopPolicy,
) -> Result<GaussianVector> {
    let g = system.disturbance().as_gaussian()?;
    let n = concat.state_dim();
    if x0.len() != n || u.len() != concat.input_dim() * concat.horizon {
        return Err(Error::Dimension(format!(
            "x0 has {} entries (want {n}), U has {} (want {})",
            x0.len(),
            u.len(),
            concat.input_dim() * concat.horizon
        )));
    }
    let (offset, cov) = noise_moments(concat, g);
    let mean = offset
        + &concat.a_bar * DVector::from_column_slice(x0)
        + &concat.h_bar * DVector::from_column_slice(u.as_slice());
    Ok(GaussianVector { mean, covariance: cov })
}

/// `(Ḡ(1 ⊗ m), Ḡ (I_N ⊗ Σ) Ḡᵀ)`, symmetrized.
pub(crate) fn noise_moments(concat: &ConcatenatedDynamics, g: &GaussianDisturbance) -> (DVector<f64>, DMatrix<f64>) {
    let n = concat.state_dim();
    let horizon = concat.horizon;
    let stacked_mean = DVector::from_fn(n * horizon, |i, _| g.mean()[i % n]);
    let offset = &concat.g_bar * stacked_mean;

    let mut gs = DMatrix::zeros(n * horizon, n * horizon);
    for j in 0..horizon {
        let block = concat.g_bar.columns(j * n, n) * g.covariance();
        gs.columns_mut(j * n, n).copy_from(&block);
    }
    let mut cov = gs * concat.g_bar.transpose();
    let d = cov.nrows();
    for i in 0..d {
        for k in 0..i {
            let avg = 0.5 * (cov[(i, k)] + cov[(k, i)]);
            cov[(i, k)] = avg;
            cov[(k, i)] = avg;
        }
    }
    (offset, cov)
}

/// Stacked input sequence `[u₀ᵀ … u_{N-1}ᵀ]ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopPolicy(pub Vec<f64>);

impl OpenLoopPolicy {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks length `m·N` and that every block lies inside `input_box`.
    pub fn check_feasible(&self, input_box: &HyperRect, horizon: usize) -> Result<()> {
        let m = input_box.dim();
        if self.0.len() != m * horizon {
            return Err(Error::InfeasibleInput(format!(
                "expected {} entries, got {}",
                m * horizon,
                self.0.len()
            )));
        }
        for (k, block) in self.0.chunks(m).enumerate() {
            if !input_box.contains(block) {
                return Err(Error::InfeasibleInput(format!("block {k} = {block:?} outside the input box")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReachAvoidQuery {
    pub system: LtiSystem,
    pub safe: HyperRect,
    pub target: HyperRect,
    pub horizon: usize,
    pub x0: Vec<f64>,
}

impl ReachAvoidQuery {
    pub fn new(
        system: LtiSystem,
        safe: HyperRect,
        target: HyperRect,
        horizon: usize,
        x0: Vec<f64>,
    ) -> Result<Self> {
        let n = system.state_dim();
        if safe.dim() != n || target.dim() != n || x0.len() != n {
            return Err(Error::Dimension(format!(
                "safe ({}), target ({}) and x0 ({}) must all have the state dimension {n}",
                safe.dim(),
                target.dim(),
                x0.len()
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("x0 must be finite".into()));
        }
        Ok(Self { system, safe, target, horizon, x0 })
    }

    pub fn with_x0(&self, x0: Vec<f64>) -> Result<Self> {
        Self::new(self.system.clone(), self.safe.clone(), self.target.clone(), self.horizon, x0)
    }

    /// Number of decision variables `m·N`.
    pub fn decision_dim(&self) -> usize {
        self.system.input_dim() * self.horizon
    }

    /// `𝒰^N` as one box.
    pub fn stacked_input_box(&self) -> HyperRect {
        let ib = self.system.input_box();
        let mut lower = Vec::with_capacity(self.decision_dim());
        let mut upper = Vec::with_capacity(self.decision_dim());
        for _ in 0..self.horizon {
            lower.extend_from_slice(ib.lower());
            upper.extend_from_slice(ib.upper());
        }
        HyperRect { lower, upper }
    }

    /// `𝒮 × … × 𝒮 × 𝒯` with N-1 safe copies.
    pub fn stacked_region(&self) -> HyperRect {
        let mut region = self.target.clone();
        for _ in 1..self.horizon {
            region = self.safe.product(&region);
        }
        region
    }
}
