use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::lattice;
use super::normal;
use super::{GaussianVector, QuadConfig, QuadResult};
use crate::error::{Error, Result};
use crate::lti::HyperRect;

/// Cholesky factor of a permuted covariance together with the permuted,
/// mean-centred integration limits.
#[derive(Clone, Debug)]
pub struct ReorderedCholesky {
    dim: usize,
    /// Row-major `dim × dim`, lower triangle used.
    l: Vec<f64>,
    /// `perm[i]` is the original index of variable `i`.
    pub perm: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ReorderedCholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| if j <= i { self.l[i * self.dim + j] } else { 0.0 })
    }

    fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| self.l[i * self.dim..i * self.dim + i].iter().all(|v| *v == 0.0))
    }

    /// Product of the conditional interval probabilities; exact when the
    /// factor is diagonal.
    fn diagonal_probability(&self) -> f64 {
        (0..self.dim)
            .map(|i| {
                let lii = self.l[i * self.dim + i];
                normal::interval(self.lower[i] / lii, self.upper[i] / lii)
            })
            .product()
    }

    /// Sequentially conditioned integrand at `w ∈ [0,1]^(dim-1)`.
    fn integrand(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut f = 1.0;
        for i in 0..d {
            let row = &self.l[i * d..i * d + i];
            let shift: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            let lii = self.l[i * d + i];
            let lo = (self.lower[i] - shift) / lii;
            let hi = (self.upper[i] - shift) / lii;
            let last = i + 1 == d;
            if lo > 0.0 {
                // Upper tail: work with complements.
                let qlo = normal::ccdf(lo);
                let qhi = normal::ccdf(hi);
                let width = qlo - qhi;
                f *= width;
                if !(f > 0.0) {
                    return 0.0;
                }
                if !last {
                    let q = (qlo - w[i] * width).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                    y[i] = normal::inv_ccdf_approx(q);
                }
            } else {
                let plo = normal::cdf(lo);
                let phi = normal::cdf(hi);
                let width = phi - plo;
                f *= width;
                if !(f > 0.0) {
                    return 0.0;
                }
                if !last {
                    let p = (plo + w[i] * width).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                    y[i] = normal::inv_cdf_approx(p);
                }
            }
        }
        f
    }

    fn shift_sum(&self, z: &[f64], shift: &[f64], from: u64, to: u64) -> f64 {
        let nw = self.dim - 1;
        let mut w = vec![0.0; nw];
        let mut y = vec![0.0; self.dim];
        let mut sum = 0.0;
        for j in from..to {
            for ((wi, zi), si) in w.iter_mut().zip(z).zip(shift) {
                *wi = lattice::point(j, *zi, *si);
            }
            sum += self.integrand(&w, &mut y);
        }
        sum
    }
}

/// Cholesky factorization `L Lᵀ = P Σ Pᵀ` with greedy variable reordering:
/// at each step the remaining variable with the smallest conditional interval
/// probability is placed next. Ties keep the lowest index.
///
/// If a pivot is not positive, `1e-12·trace(Σ)/d` is added to the diagonal
/// once and the factorization retried.
pub fn cholesky_with_reorder(g: &GaussianVector, region: &HyperRect) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let rc = factor(g, region)?;
    Ok((rc.l_matrix(), rc.perm))
}

fn factor(g: &GaussianVector, region: &HyperRect) -> Result<ReorderedCholesky> {
    let d = g.dim();
    if region.dim() != d {
        return Err(Error::Dimension(format!(
            "box has dimension {}, Gaussian has {d}",
            region.dim()
        )));
    }
    let lower: Vec<f64> = region.lower().iter().zip(g.mean.iter()).map(|(l, m)| l - m).collect();
    let upper: Vec<f64> = region.upper().iter().zip(g.mean.iter()).map(|(u, m)| u - m).collect();
    let cov: Vec<f64> = (0..d * d).map(|k| g.covariance[(k / d, k % d)]).collect();

    match try_factor(d, cov.clone(), lower.clone(), upper.clone()) {
        Ok(rc) => Ok(rc),
        Err(_) => {
            let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
            let jitter = 1e-12 * trace / d as f64;
            let mut cov = cov;
            for i in 0..d {
                cov[i * d + i] += jitter;
            }
            try_factor(d, cov, lower, upper)
        }
    }
}

fn try_factor(d: usize, mut c: Vec<f64>, mut lower: Vec<f64>, mut upper: Vec<f64>) -> Result<ReorderedCholesky> {
    let mut l = vec![0.0; d * d];
    let mut perm: Vec<usize> = (0..d).collect();
    // Residual conditional variances and conditional means of the unplaced variables.
    let mut resid: Vec<f64> = (0..d).map(|i| c[i * d + i]).collect();
    let mut mu = vec![0.0; d];

    for i in 0..d {
        let mut best = i;
        let mut best_prob = f64::INFINITY;
        for j in i..d {
            let prob = if resid[j] > 0.0 {
                let sd = resid[j].sqrt();
                normal::interval((lower[j] - mu[j]) / sd, (upper[j] - mu[j]) / sd)
            } else if lower[j] <= mu[j] && mu[j] <= upper[j] {
                1.0
            } else {
                0.0
            };
            if prob < best_prob {
                best_prob = prob;
                best = j;
            }
        }
        if best != i {
            swap_symmetric(&mut c, d, i, best);
            for k in 0..i {
                l.swap(i * d + k, best * d + k);
            }
            resid.swap(i, best);
            mu.swap(i, best);
            lower.swap(i, best);
            upper.swap(i, best);
            perm.swap(i, best);
        }

        let pivot = resid[i];
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: i, dim: d });
        }
        let lii = pivot.sqrt();
        l[i * d + i] = lii;
        for j in i + 1..d {
            let dot: f64 = (0..i).map(|k| l[j * d + k] * l[i * d + k]).sum();
            let lji = (c[j * d + i] - dot) / lii;
            l[j * d + i] = lji;
            resid[j] -= lji * lji;
        }

        let yi = normal::truncated_mean((lower[i] - mu[i]) / lii, (upper[i] - mu[i]) / lii);
        for j in i + 1..d {
            mu[j] += l[j * d + i] * yi;
        }
    }

    Ok(ReorderedCholesky { dim: d, l, perm, lower, upper })
}

fn swap_symmetric(c: &mut [f64], d: usize, a: usize, b: usize) {
    for k in 0..d {
        c.swap(a * d + k, b * d + k);
    }
    for k in 0..d {
        c.swap(k * d + a, k * d + b);
    }
}

/// `P(lower <= Y <= upper)` for `Y ~ g`.
///
/// Points per shift start at `cfg.initial_points` and double until `err_est <= cfg.eps` or
/// `max_samples` is reached. `err_est` is three standard errors of the
/// per-shift estimates. Deterministic for a fixed `cfg.seed`.
pub fn mvn_box_probability(g: &GaussianVector, region: &HyperRect, cfg: &QuadConfig) -> Result<QuadResult> {
    cfg.validate()?;
    let d = g.dim();
    if region.dim() != d {
        return Err(Error::Dimension(format!(
            "box has dimension {}, Gaussian has {d}",
            region.dim()
        )));
    }
    if region.is_empty() {
        return Ok(QuadResult::exact(0.0));
    }

    // Coordinates unconstrained on both sides integrate out.
    let keep: Vec<usize> = (0..d)
        .filter(|&i| region.lower()[i].is_finite() || region.upper()[i].is_finite())
        .collect();
    if keep.is_empty() {
        return Ok(QuadResult::exact(1.0));
    }
    let marginal;
    let marginal_box;
    let (g, region) = if keep.len() < d {
        marginal = GaussianVector {
            mean: g.mean.select_rows(&keep),
            covariance: g.covariance.select_rows(&keep).select_columns(&keep),
        };
        marginal_box = HyperRect::new(
            keep.iter().map(|&i| region.lower()[i]).collect(),
            keep.iter().map(|&i| region.upper()[i]).collect(),
        )?;
        (&marginal, &marginal_box)
    } else {
        (g, region)
    };

    let rc = factor(g, region)?;
    if rc.dim == 1 || rc.is_diagonal() {
        return Ok(QuadResult::exact(rc.diagonal_probability().clamp(0.0, 1.0)));
    }

    let shifts = cfg.shifts as usize;
    let nw = rc.dim - 1;
    let z = lattice::richtmyer_generator(nw);
    let shift_vectors: Vec<Vec<f64>> = (0..shifts)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(s as u64);
            (0..nw).map(|_| rng.random::<f64>()).collect()
        })
        .collect();

    let cap_per_shift = (cfg.max_samples / shifts as u64).max(1);
    let mut per_shift = cfg.initial_points.min(cap_per_shift);
    let mut done = 0_u64;
    let mut sums = vec![0.0; shifts];
    loop {
        let partial: Vec<f64> = shift_vectors
            .par_iter()
            .map(|sv| rc.shift_sum(&z, sv, done, per_shift))
            .collect();
        for (s, p) in sums.iter_mut().zip(partial) {
            *s += p;
        }
        done = per_shift;

        let estimates: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
        let mean = estimates.iter().sum::<f64>() / shifts as f64;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (shifts as f64 - 1.0);
        let err_est = 3.0 * (var / shifts as f64).sqrt();
        let samples_used = done * shifts as u64;

        if err_est <= cfg.eps || done >= cap_per_shift {
            return Ok(QuadResult {
                p: mean.clamp(0.0, 1.0),
                err_est,
                samples_used,
            });
        }
        per_shift = (2 * done).min(cap_per_shift);
    }
}
