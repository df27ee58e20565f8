//! Randomly shifted rank-1 lattice (Richtmyer generator `frac(√p_i)`).

/// First `count` primes.
pub fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    // p_n < n (ln n + ln ln n) for n >= 6
    let limit = if count < 6 {
        15
    } else {
        let n = count as f64;
        (n * (n.ln() + n.ln().ln())).ceil() as usize + 1
    };
    let mut sieve = vec![true; limit + 1];
    sieve[0] = false;
    sieve[1] = false;
    let mut i = 2;
    while i * i <= limit {
        if sieve[i] {
            let mut j = i * i;
            while j <= limit {
                sieve[j] = false;
                j += i;
            }
        }
        i += 1;
    }
    out.extend(
        sieve
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| i as u64)
            .take(count),
    );
    out
}

/// Generating vector `z_i = frac(√p_i)`.
pub fn richtmyer_generator(dim: usize) -> Vec<f64> {
    primes(dim).into_iter().map(|p| (p as f64).sqrt().fract()).collect()
}

/// Coordinate `i` of lattice point `j` under `shift`, folded with the
/// tent (baker's) transform so the integrand looks periodic.
#[inline]
pub fn point(j: u64, z: f64, shift: f64) -> f64 {
    let v = (j as f64 * z + shift).fract();
    1.0 - (2.0 * v - 1.0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_primes() {
        assert_eq!(primes(10), vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29]);
        let p = primes(1000);
        assert_eq!(p.len(), 1000);
        assert_eq!(p[999], 7919);
    }

    #[test]
    fn generator_is_irrational_fraction() {
        let z = richtmyer_generator(3);
        assert!((z[0] - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((z[1] - (3f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((z[2] - (5f64.sqrt() - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn points_in_unit_interval_and_equidistributed() {
        let z = richtmyer_generator(1)[0];
        let n = 10_000;
        let mean: f64 = (0..n).map(|j| point(j, z, 0.37)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 1e-3);
        assert!((0..n).map(|j| point(j, z, 0.37)).all(|v| (0.0..=1.0).contains(&v)));
    }
}
