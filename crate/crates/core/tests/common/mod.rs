#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use reachkit::{Disturbance, GaussianDisturbance, HyperRect, LtiSystem, ReachAvoidQuery};

pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn big_phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

const CUT: f64 = 9.0;
const PANELS: usize = 240;

/// Composite Simpson rule on `[a, b]`.
fn simpson(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / PANELS as f64;
    let mut s = f(a) + f(b);
    for i in 1..PANELS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Box probability for `d <= 3` by nested Simpson integration over the
/// Cholesky-whitened coordinates, in the original variable order.
pub fn dense_box_probability(mean: &[f64], cov: &DMatrix<f64>, lower: &[f64], upper: &[f64]) -> f64 {
    let d = mean.len();
    assert!((1..=3).contains(&d));
    let l = cov.clone().cholesky().expect("positive definite").l();
    let a: Vec<f64> = (0..d).map(|i| lower[i] - mean[i]).collect();
    let b: Vec<f64> = (0..d).map(|i| upper[i] - mean[i]).collect();
    let limits = |i: usize, z: &[f64]| -> (f64, f64) {
        let shift: f64 = (0..i).map(|j| l[(i, j)] * z[j]).sum();
        let lo = ((a[i] - shift) / l[(i, i)]).max(-CUT);
        let hi = ((b[i] - shift) / l[(i, i)]).min(CUT);
        (lo, hi)
    };
    let last = |z: &[f64]| -> f64 {
        let (lo, hi) = limits(d - 1, z);
        if hi <= lo {
            0.0
        } else {
            big_phi(hi) - big_phi(lo)
        }
    };
    match d {
        1 => last(&[]),
        2 => {
            let (lo, hi) = limits(0, &[]);
            simpson(lo, hi, |z0| phi(z0) * last(&[z0]))
        }
        _ => {
            let (lo, hi) = limits(0, &[]);
            simpson(lo, hi, |z0| {
                let (lo1, hi1) = limits(1, &[z0]);
                phi(z0) * simpson(lo1, hi1, |z1| phi(z1) * last(&[z0, z1]))
            })
        }
    }
}

/// `L Lᵀ` with a well-conditioned random lower factor.
pub fn random_covariance(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..i {
            l[(i, j)] = rng.random_range(-0.8..0.8);
        }
        l[(i, i)] = rng.random_range(0.5..1.5);
    }
    &l * l.transpose()
}

pub fn gaussian_system(a: DMatrix<f64>, b: DMatrix<f64>, cov: DMatrix<f64>, input: HyperRect) -> LtiSystem {
    let n = a.nrows();
    let g = GaussianDisturbance::new(DVector::zeros(n), cov).unwrap();
    LtiSystem::new(a, b, Disturbance::Gaussian(g), input).unwrap()
}

/// Sampled-data double integrator with sampling time 0.1, noise `0.01 I`,
/// safe set `[-1,1]^2`, target `[-0.5,0.5]^2`, inputs in `[-1,1]`, N = 10.
pub fn double_integrator(x0: Vec<f64>) -> ReachAvoidQuery {
    let ns = 0.1;
    let a = DMatrix::from_row_slice(2, 2, &[1.0, ns, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[ns * ns / 2.0, ns]);
    let sys = gaussian_system(a, b, DMatrix::identity(2, 2) * 0.01, HyperRect::cube(1, -1.0, 1.0).unwrap());
    ReachAvoidQuery::new(
        sys,
        HyperRect::cube(2, -1.0, 1.0).unwrap(),
        HyperRect::cube(2, -0.5, 0.5).unwrap(),
        10,
        x0,
    )
    .unwrap()
}
