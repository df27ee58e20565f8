//! Univariate standard normal primitives.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// `Φ(x)`. Exact 0/1 at ∓∞.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `1 - Φ(x)` without cancellation.
#[inline]
pub fn ccdf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `Φ(b) - Φ(a)` evaluated on whichever tail keeps precision.
#[inline]
pub fn interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a > 0.0 {
        ccdf(a) - ccdf(b)
    } else if b < 0.0 {
        cdf(b) - cdf(a)
    } else {
        1.0 - ccdf(b) - cdf(a)
    }
}

/// `Φ⁻¹(p)`: rational approximation (relative error ~1e-9) followed by one
/// Halley step against `cdf`.
pub fn inv_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -inv_cdf_lower(1.0 - p);
    }
    inv_cdf_lower(p)
}

/// `Φ⁻¹(1 - q)` accurate for tiny `q`.
pub fn inv_ccdf(q: f64) -> f64 {
    -inv_cdf(q)
}

/// Rational approximation of `Φ⁻¹(p)` without refinement, relative error
/// about 1e-9. Used inside the quadrature integrand.
pub(crate) fn inv_cdf_approx(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -rational_lower(1.0 - p);
    }
    rational_lower(p)
}

pub(crate) fn inv_ccdf_approx(q: f64) -> f64 {
    -inv_cdf_approx(q)
}

// p in (0, 0.5]
fn inv_cdf_lower(p: f64) -> f64 {
    let x = rational_lower(p);
    // Halley refinement; x <= 0 here so cdf(x) is computed without cancellation.
    let e = cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

// Acklam's approximation on (0, 0.5].
fn rational_lower(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_671_010_229_528,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Mean of a standard normal truncated to `[a, b]`.
pub fn truncated_mean(a: f64, b: f64) -> f64 {
    let mass = interval(a, b);
    if mass > 1e-300 {
        let pa = if a.is_finite() { pdf(a) } else { 0.0 };
        let pb = if b.is_finite() { pdf(b) } else { 0.0 };
        return (pa - pb) / mass;
    }
    // Negligible mass: the interval lies deep in one tail, its near end is
    // a good stand-in for the mean.
    if a.is_finite() && a > 0.0 {
        a
    } else if b.is_finite() && b < 0.0 {
        b
    } else if a.is_finite() && b.is_finite() {
        0.5 * (a + b)
    } else {
        0.0
    }
}
