//! Seeded random variates. All randomness in the crate flows through
//! [`rng_from_seed`] so results are reproducible across platforms.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform on the open interval (0, 1).
fn open_uniform(rng: &mut Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Gamma(shape, 1) by Marsaglia–Tsang squeeze/rejection. Shapes below one
/// use the `Gamma(a + 1)·U^(1/a)` boost.
pub fn gamma(shape: f64, rng: &mut Rng) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(invalid("gamma shape must be positive and finite"));
    }
    if shape < 1.0 {
        let g = gamma(shape + 1.0, rng)?;
        return Ok(g * libm::pow(open_uniform(rng), 1.0 / shape));
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_uniform(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return Ok(d * v);
        }
        if libm::log(u) < 0.5 * x2 + d * (1.0 - v + libm::log(v)) {
            return Ok(d * v);
        }
    }
}

/// Beta(a, b) as `X / (X + Y)` with independent gamma draws.
pub fn beta(a: f64, b: f64, rng: &mut Rng) -> Result<f64> {
    let x = gamma(a, rng)?;
    let y = gamma(b, rng)?;
    Ok(x / (x + y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn beta_moments_within_three_standard_errors() {
        let mut rng = rng_from_seed(2024);
        let n = 100_000;
        let (a, b) = (2.0, 3.0);
        let s: alloc::vec::Vec<f64> = (0..n).map(|_| beta(a, b, &mut rng).unwrap()).collect();
        let (mean, var) = moments(&s);
        let true_mean = a / (a + b);
        let true_var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
        let se_mean = libm::sqrt(true_var / n as f64);
        assert!((mean - true_mean).abs() < 3.0 * se_mean, "mean {mean}");
        // SE of the sample variance: sqrt((mu4 - var^2)/n), mu4 estimated empirically
        let mu4 = s.iter().map(|v| libm::pow(v - mean, 4.0)).sum::<f64>() / n as f64;
        let se_var = libm::sqrt((mu4 - var * var) / n as f64);
        assert!(
            (var - true_var).abs() < 3.0 * se_var,
            "var {var} vs {true_var}"
        );
    }

    #[test]
    fn small_shape_gamma_is_positive() {
        let mut rng = rng_from_seed(1);
        let s: alloc::vec::Vec<f64> = (0..20_000).map(|_| gamma(0.5, &mut rng).unwrap()).collect();
        assert!(s.iter().all(|v| *v > 0.0));
        let (mean, _) = moments(&s);
        // Gamma(0.5) has mean 0.5 and sd ~0.707
        assert!((mean - 0.5).abs() < 3.0 * 0.7072 / libm::sqrt(20_000.0));
    }

    #[test]
    fn rejects_bad_shape() {
        let mut rng = rng_from_seed(0);
        assert!(gamma(0.0, &mut rng).is_err());
        assert!(beta(2.0, -1.0, &mut rng).is_err());
    }
}
