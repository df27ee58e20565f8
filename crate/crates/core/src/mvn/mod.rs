//! Multivariate normal probabilities of hyper-rectangles.
//!
//! The integral is transformed to the unit cube by sequential conditioning
//! on a (reordered) Cholesky factor and integrated with a randomly shifted
//! rank-1 lattice rule. The spread across independent shifts gives the error
//! estimate.

mod genz;
pub mod lattice;
pub mod normal;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use genz::{cholesky_with_reorder, mvn_box_probability, ReorderedCholesky};

/// `N(mean, covariance)`.
#[derive(Clone, Debug)]
pub struct GaussianVector {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianVector {
    /// Checks shapes, finiteness and symmetry (to 1e-12 relative to the
    /// largest entry). Definiteness is left to the factorization.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for a mean of length {d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("mean and covariance must be finite".into()));
        }
        let scale = covariance.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..d {
            if covariance[(i, i)] < 0.0 {
                return Err(Error::InvalidArgument(format!("negative variance at index {i}")));
            }
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadConfig {
    /// Target absolute error of the probability.
    pub eps: f64,
    /// Cap on lattice points summed over all shifts.
    pub max_samples: u64,
    pub shifts: u32,
    pub seed: u64,
    /// Lattice points per shift in the first pass.
    pub initial_points: u64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_samples: 10_000_000,
            shifts: 12,
            seed: 0,
            initial_points: 1000,
        }
    }
}

impl QuadConfig {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidArgument(format!("quadrature eps must be in (0,1), got {}", self.eps)));
        }
        if self.shifts < 2 {
            return Err(Error::InvalidArgument("quadrature needs at least 2 shifts".into()));
        }
        if self.initial_points == 0 {
            return Err(Error::InvalidArgument("initial_points must be positive".into()));
        }
        if self.max_samples < self.shifts as u64 {
            return Err(Error::InvalidArgument("max_samples must be at least the shift count".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadResult {
    pub p: f64,
    pub err_est: f64,
    pub samples_used: u64,
}

impl QuadResult {
    pub fn exact(p: f64) -> Self {
        Self {
            p,
            err_est: 0.0,
            samples_used: 0,
        }
    }
}
