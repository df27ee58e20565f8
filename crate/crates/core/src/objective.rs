//! The open-loop reach-avoid objective
//! `r(U) = P{x_N ∈ 𝒯 ∧ x_k ∈ 𝒮, k = 0..N-1}` for a fixed input sequence.
//!
//! Three evaluators: Gaussian quadrature over the stacked region, Monte-Carlo
//! simulation for any disturbance with a sampler, and the characteristic
//! function of the stacked state.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{noise_moments, ConcatenatedDynamics, HyperRect, LtiSystem, OpenLoopPolicy, ReachAvoidQuery};
use crate::mvn::{mvn_box_probability, GaussianVector, QuadConfig, QuadResult};

const MC_BATCH: usize = 4096;

/// Caches everything about a query that does not depend on `U`, so repeated
/// objective evaluations only pay for the quadrature.
#[derive(Clone, Debug)]
pub struct GaussianReachModel {
    query: ReachAvoidQuery,
    concat: ConcatenatedDynamics,
    /// `Ā x₀ + Ḡ(1 ⊗ m)`
    base_mean: DVector<f64>,
    covariance: DMatrix<f64>,
    region: HyperRect,
    input_box: HyperRect,
}

impl GaussianReachModel {
    pub fn new(query: &ReachAvoidQuery) -> Result<Self> {
        let g = query.system.disturbance().as_gaussian()?;
        let concat = ConcatenatedDynamics::new(&query.system, query.horizon)?;
        let (offset, covariance) = noise_moments(&concat, g);
        let base_mean = offset + &concat.a_bar * DVector::from_column_slice(&query.x0);
        Ok(Self {
            region: query.stacked_region(),
            input_box: query.stacked_input_box(),
            query: query.clone(),
            concat,
            base_mean,
            covariance,
        })
    }

    pub fn query(&self) -> &ReachAvoidQuery {
        &self.query
    }

    pub fn concat(&self) -> &ConcatenatedDynamics {
        &self.concat
    }

    pub fn stacked_input_box(&self) -> &HyperRect {
        &self.input_box
    }

    pub fn gaussian(&self, u: &OpenLoopPolicy) -> GaussianVector {
        GaussianVector {
            mean: &self.base_mean + &self.concat.h_bar * DVector::from_column_slice(u.as_slice()),
            covariance: self.covariance.clone(),
        }
    }

    /// Quadrature value of `r(U)`. Returns exactly 0 when `x₀ ∉ 𝒮`.
    pub fn probability(&self, u: &OpenLoopPolicy, cfg: &QuadConfig) -> Result<QuadResult> {
        u.check_feasible(self.query.system.input_box(), self.query.horizon)?;
        if !self.query.safe.contains(&self.query.x0) {
            return Ok(QuadResult::exact(0.0));
        }
        mvn_box_probability(&self.gaussian(u), &self.region, cfg)
    }
}

/// Gaussian quadrature of the reach-avoid probability.
pub fn reach_avoid_probability(query: &ReachAvoidQuery, u: &OpenLoopPolicy, cfg: &QuadConfig) -> Result<QuadResult> {
    GaussianReachModel::new(query)?.probability(u, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p_hat: f64,
    /// `1.96·sqrt(p̂(1-p̂)/n)`
    pub half_width_95: f64,
    pub n_samples: u64,
}

impl McEstimate {
    fn from_counts(hits: u64, n: u64) -> Self {
        let p_hat = hits as f64 / n as f64;
        Self {
            p_hat,
            half_width_95: 1.96 * (p_hat * (1.0 - p_hat) / n as f64).sqrt(),
            n_samples: n,
        }
    }
}

/// Monte-Carlo estimate by direct simulation of the dynamics.
///
/// Samples are drawn in fixed-size batches, each on its own ChaCha stream
/// derived from `seed`, so the result does not depend on scheduling.
pub fn reach_avoid_probability_mc(
    query: &ReachAvoidQuery,
    u: &OpenLoopPolicy,
    n_samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 samples, got {n_samples}")));
    }
    let sys = &query.system;
    u.check_feasible(sys.input_box(), query.horizon)?;
    if !query.safe.contains(&query.x0) {
        return Ok(McEstimate::from_counts(0, n_samples));
    }
    let n = sys.state_dim();
    let m = sys.input_dim();
    let batches = (n_samples as usize).div_ceil(MC_BATCH);

    let hits: u64 = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = MC_BATCH.min(n_samples as usize - b * MC_BATCH);
            let mut x = vec![0.0; n];
            let mut next = vec![0.0; n];
            let mut w = vec![0.0; n];
            let mut hits = 0_u64;
            for _ in 0..count {
                x.copy_from_slice(&query.x0);
                let mut ok = true;
                for k in 0..query.horizon {
                    sys.disturbance().sample(&mut rng, &mut w);
                    sys.step(&x, &u.as_slice()[k * m..(k + 1) * m], &w, &mut next);
                    std::mem::swap(&mut x, &mut next);
                    let set = if k + 1 == query.horizon { &query.target } else { &query.safe };
                    if !set.contains(&x) {
                        ok = false;
                        break;
                    }
                }
                hits += ok as u64;
            }
            hits
        })
        .sum();
    Ok(McEstimate::from_counts(hits, n_samples))
}

/// Characteristic function of the stacked state,
/// `exp(j βᵀ(Ā x₀ + H̄ U)) · Π_k Ψ_w((Ḡᵀβ)_k)`.
pub fn cf_x(
    concat: &ConcatenatedDynamics,
    system: &LtiSystem,
    x0: &[f64],
    u: &OpenLoopPolicy,
    beta: &[f64],
) -> Result<Complex64> {
    let n = concat.state_dim();
    if beta.len() != concat.stacked_dim() {
        return Err(Error::Dimension(format!(
            "beta has {} entries, stacked state has {}",
            beta.len(),
            concat.stacked_dim()
        )));
    }
    let b = DVector::from_column_slice(beta);
    let drift = &concat.a_bar * DVector::from_column_slice(x0) + &concat.h_bar * DVector::from_column_slice(u.as_slice());
    let gtb = concat.g_bar.transpose() * &b;
    let mut acc = Complex64::new(0.0, b.dot(&drift)).exp();
    for k in 0..concat.horizon {
        acc *= system.disturbance().characteristic_function(&gtb.as_slice()[k * n..(k + 1) * n])?;
    }
    Ok(acc)
}

/// Density of the stacked state at `point`, recovered by trapezoidal
/// inversion of [`cf_x`] on `[-omega, omega]^d` with `nodes` points per axis.
///
/// Validation aid only: limited to stacked dimension `d <= 2`.
pub fn density_by_inversion(
    concat: &ConcatenatedDynamics,
    system: &LtiSystem,
    x0: &[f64],
    u: &OpenLoopPolicy,
    point: &[f64],
    omega: f64,
    nodes: usize,
) -> Result<f64> {
    let d = concat.stacked_dim();
    if d > 2 {
        return Err(Error::InvalidArgument(format!("density inversion supports d <= 2, got {d}")));
    }
    if point.len() != d || nodes < 3 {
        return Err(Error::InvalidArgument("point dimension or node count".into()));
    }
    let h = 2.0 * omega / (nodes - 1) as f64;
    let weight = |i: usize| if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
    let mut beta = vec![0.0; d];
    let mut total = 0.0;
    let count = nodes.pow(d as u32);
    for flat in 0..count {
        let mut rem = flat;
        let mut wgt = 1.0;
        for b in beta.iter_mut() {
            let i = rem % nodes;
            rem /= nodes;
            *b = -omega + i as f64 * h;
            wgt *= weight(i);
        }
        let phase: f64 = beta.iter().zip(point).map(|(b, x)| b * x).sum();
        let val = Complex64::new(0.0, -phase).exp() * cf_x(concat, system, x0, u, &beta)?;
        total += wgt * val.re;
    }
    Ok(total * h.powi(d as i32) / (2.0 * PI).powi(d as i32))
}
