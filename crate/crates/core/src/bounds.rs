//! Monte Carlo checks of the perturbation bounds.
//!
//! For a unit-norm target vector `y` drawn uniformly on the sphere, the
//! constraint moves leaf `j` by `ε_j = z_j·zᵀy / zᵀz`. These routines
//! estimate `E[ε²]` (averaged uniformly over leaves) and compare it with the
//! stated bound `1/L` and with the closed forms.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::constraint::ZVector;
use crate::error::{invalid, Error, Result};
use crate::sampling::{beta, rng_from_seed, standard_normal, Rng};

/// Uniform draw from the unit sphere in `L` dimensions.
pub fn sample_unit_sphere(l: usize, rng: &mut Rng) -> Vec<f64> {
    assert!(l >= 1, "sphere dimension must be at least 1");
    loop {
        let g: Vec<f64> = (0..l).map(|_| standard_normal(rng)).collect();
        let n = libm::sqrt(g.iter().map(|v| v * v).sum::<f64>());
        if n > 0.0 {
            return g.into_iter().map(|v| v / n).collect();
        }
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn estimate(&self) -> McEstimate {
        let var = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        };
        McEstimate {
            mean: self.mean,
            standard_error: libm::sqrt(var / self.n as f64),
            n_samples: self.n as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n_samples: usize,
}

impl McEstimate {
    /// `|mean − target| ≤ max(rel·|target|, k·SE)`.
    pub fn agrees_with(&self, target: f64, rel: f64, k: f64) -> bool {
        (self.mean - target).abs() <= (rel * target.abs()).max(k * self.standard_error)
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n < 2 {
        return Err(invalid("need at least two Monte Carlo samples"));
    }
    Ok(())
}

/// Estimates `E[(z̄ᵀy)²]` for unit `z̄` and `y` uniform on the unit sphere.
/// By rotation invariance `z̄` is taken as the first basis vector, so each
/// sample is the squared first coordinate. Expected value `1/L`.
pub fn sphere_coordinate_mc(l: usize, n_samples: usize, seed: u64) -> Result<McEstimate> {
    if l == 0 {
        return Err(invalid("L must be at least 1"));
    }
    check_samples(n_samples)?;
    let mut rng = rng_from_seed(seed);
    let mut acc = Moments::default();
    for _ in 0..n_samples {
        let y = sample_unit_sphere(l, &mut rng);
        acc.push(y[0] * y[0]);
    }
    Ok(acc.estimate())
}

/// Variance of Beta(a, a) with `a = (L−1)/2`, which equals `1/(4L)`.
pub fn sphere_beta_variance(l: usize) -> f64 {
    let a = (l as f64 - 1.0) / 2.0;
    a * a / ((2.0 * a) * (2.0 * a) * (2.0 * a + 1.0))
}

/// Estimates `E[(2u − 1)²]` for `u ~ Beta((L−1)/2, (L−1)/2)`; the first
/// coordinate of a uniform sphere point has this law, so the target is `1/L`.
pub fn sphere_beta_mc(l: usize, n_samples: usize, seed: u64) -> Result<McEstimate> {
    if l < 2 {
        return Err(invalid("the Beta form needs L ≥ 2"));
    }
    check_samples(n_samples)?;
    let a = (l as f64 - 1.0) / 2.0;
    let mut rng = rng_from_seed(seed);
    let mut acc = Moments::default();
    for _ in 0..n_samples {
        let y0 = 2.0 * beta(a, a, &mut rng)? - 1.0;
        acc.push(y0 * y0);
    }
    Ok(acc.estimate())
}

/// How the random target vector is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Sphere of radius `√L`: zero mean, unit per-coordinate variance.
    UnitVariance,
    /// Unit sphere.
    UnitSphere,
}

impl Normalization {
    fn sq_radius(self, l: usize) -> f64 {
        match self {
            Normalization::UnitVariance => l as f64,
            Normalization::UnitSphere => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub leaves: usize,
    pub n_samples: usize,
    pub normalization: Normalization,
    pub empirical_mean_eps2: f64,
    pub standard_error: f64,
    /// Bound being checked.
    pub bound: f64,
    /// `‖z‖₁² / (L²‖z‖₂²)`.
    pub exact_form: f64,
    /// Analytic expectation under the chosen normalization.
    pub expected_value: f64,
    /// `‖z‖₁ / (√L·‖z‖₂)`.
    pub z_norm_ratio: f64,
}

impl PerturbationReport {
    /// `empirical_mean_eps2 ≤ bound + k·SE`.
    pub fn within_bound(&self, k: f64) -> bool {
        self.empirical_mean_eps2 <= self.bound + k * self.standard_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBounds {
    pub unit_variance: PerturbationReport,
    pub unit_sphere: PerturbationReport,
}

fn nonzero(z: &ZVector) -> Result<()> {
    if z.is_empty() || z.is_zero() {
        return Err(Error::ZeroZ);
    }
    Ok(())
}

/// Per-sample `(zᵀy)² / zᵀz` for `y` on the unit sphere.
fn projected_sq(z: &[f64], zz: f64, rng: &mut Rng) -> f64 {
    let y = sample_unit_sphere(z.len(), rng);
    let t: f64 = z.iter().zip(&y).map(|(a, b)| a * b).sum();
    t * t / zz
}

/// Estimates the mean squared perturbation for both target normalizations
/// from a shared stream of sphere samples. `ε²` is averaged over all leaves
/// for each sample: `(1/L)Σ_j ε_j² = r²(zᵀy)² / (L·zᵀz)`.
pub fn perturbation_mc(z: &ZVector, n_samples: usize, seed: u64) -> Result<PerturbationBounds> {
    nonzero(z)?;
    check_samples(n_samples)?;
    let l = z.len();
    let lf = l as f64;
    let zz = z.sq_norm();
    let mut rng = rng_from_seed(seed);
    let mut acc = Moments::default();
    for _ in 0..n_samples {
        acc.push(projected_sq(z.entries(), zz, &mut rng) / lf);
    }
    let base = acc.estimate();
    let exact_form = z.l1_norm() * z.l1_norm() / (lf * lf * zz);
    let report = |norm: Normalization| {
        let r2 = norm.sq_radius(l);
        PerturbationReport {
            leaves: l,
            n_samples,
            normalization: norm,
            empirical_mean_eps2: base.mean * r2,
            standard_error: base.standard_error * r2,
            bound: 1.0 / lf,
            exact_form,
            expected_value: r2 / (lf * lf),
            z_norm_ratio: z.norm_ratio(),
        }
    };
    Ok(PerturbationBounds {
        unit_variance: report(Normalization::UnitVariance),
        unit_sphere: report(Normalization::UnitSphere),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitBoundReport {
    /// `bound` holds `(σ²/(m+σ²))²/L`.
    pub report: PerturbationReport,
    pub leaf_count: usize,
    pub noise_variance: f64,
    /// `(m/(m+σ²))²/L`, the expectation of the explicit correction term.
    pub shrunk_bound: f64,
}

/// Monte Carlo mean of the squared explicit-representation correction
/// `ρ·X2_j·X3` with every leaf holding `m` rows and unit-variance targets.
/// Reported only; nothing is asserted.
pub fn explicit_bound_report(
    z: &ZVector,
    m: usize,
    noise_variance: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ExplicitBoundReport> {
    nonzero(z)?;
    check_samples(n_samples)?;
    if m == 0 {
        return Err(invalid("leaf count must be at least 1"));
    }
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(invalid("noise variance must be finite and nonnegative"));
    }
    let l = z.len();
    let lf = l as f64;
    let mf = m as f64;
    let w = mf / (mf + noise_variance);
    let zd = z.entries();
    let radius = libm::sqrt(lf);
    let mut rng = rng_from_seed(seed);
    let mut acc = Moments::default();
    let mut x2 = alloc::vec![0.0; l];
    for _ in 0..n_samples {
        let y = sample_unit_sphere(l, &mut rng);
        let mut x3 = 0.0;
        let mut border = 0.0;
        for j in 0..l {
            x2[j] = w * zd[j];
            x3 += zd[j] * w * y[j] * radius;
            border += w * zd[j] * zd[j];
        }
        let rho = -1.0 / border;
        let mean_sq = x2
            .iter()
            .map(|v| (rho * v * x3) * (rho * v * x3))
            .sum::<f64>()
            / lf;
        acc.push(mean_sq);
    }
    let est = acc.estimate();
    let shrink = noise_variance / (mf + noise_variance);
    let stated = shrink * shrink / lf;
    Ok(ExplicitBoundReport {
        report: PerturbationReport {
            leaves: l,
            n_samples,
            normalization: Normalization::UnitVariance,
            empirical_mean_eps2: est.mean,
            standard_error: est.standard_error,
            bound: stated,
            exact_form: z.l1_norm() * z.l1_norm() / (lf * lf * z.sq_norm()),
            expected_value: w * w / lf,
            z_norm_ratio: z.norm_ratio(),
        },
        leaf_count: m,
        noise_variance,
        shrunk_bound: w * w / lf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(v: &[f64]) -> ZVector {
        ZVector::new(v.to_vec(), None).unwrap()
    }

    #[test]
    fn sphere_samples_have_unit_norm() {
        let mut rng = rng_from_seed(1);
        for l in [1, 2, 7, 64] {
            let y = sample_unit_sphere(l, &mut rng);
            assert!((y.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for _ in 0..20 {
            let y = sample_unit_sphere(1, &mut rng);
            assert_eq!(y[0].abs(), 1.0);
        }
    }

    #[test]
    fn sphere_coordinates_are_centred() {
        let mut rng = rng_from_seed(2);
        let mut acc = Moments::default();
        for _ in 0..100_000 {
            acc.push(sample_unit_sphere(5, &mut rng)[2]);
        }
        let e = acc.estimate();
        assert!(e.mean.abs() <= 3.0 * e.standard_error);
    }

    #[test]
    fn sphere_check_for_one_leaf_is_exact() {
        let e = sphere_coordinate_mc(1, 1000, 0).unwrap();
        assert_eq!(e.mean, 1.0);
    }

    #[test]
    fn beta_variance_identity() {
        for l in [2usize, 3, 5, 16, 100] {
            assert!((sphere_beta_variance(l) - 0.25 / l as f64).abs() < 1e-15);
        }
        assert!((sphere_beta_variance(5) - 1.0 / 20.0).abs() < 1e-15);
        assert!((4.0 * sphere_beta_variance(5) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn beta_and_sphere_estimates_agree() {
        let b = sphere_beta_mc(5, 100_000, 3).unwrap();
        let s = sphere_coordinate_mc(5, 100_000, 4).unwrap();
        assert!(b.agrees_with(0.2, 0.0, 3.0), "{b:?}");
        assert!(s.agrees_with(0.2, 0.0, 3.0), "{s:?}");
    }

    #[test]
    fn equal_pair_has_unit_ratio() {
        let r = perturbation_mc(&z(&[0.3, -0.3]), 10_000, 0).unwrap();
        assert!((r.unit_variance.z_norm_ratio - 1.0).abs() < 1e-15);
        assert!((r.unit_variance.exact_form - 0.5).abs() < 1e-15);
        assert!(r.unit_variance.within_bound(3.0));
    }

    #[test]
    fn normalizations_differ_by_l() {
        let r = perturbation_mc(&z(&[0.1, -0.2, 0.05, 0.05]), 5000, 9).unwrap();
        let ratio = r.unit_variance.empirical_mean_eps2 / r.unit_sphere.empirical_mean_eps2;
        assert!((ratio - 4.0).abs() < 1e-12);
        assert!(r.unit_sphere.within_bound(0.0));
    }

    #[test]
    fn concentrated_z_has_small_ratio() {
        let mut v = alloc::vec![0.0; 64];
        v[0] = 0.5;
        v[1] = -0.5;
        let r = perturbation_mc(&z(&v), 20_000, 5).unwrap();
        assert!((r.unit_variance.z_norm_ratio - libm::sqrt(2.0 / 64.0)).abs() < 1e-12);
        assert!(r.unit_sphere.empirical_mean_eps2 < 1.0 / 64.0);
    }

    #[test]
    fn zero_z_is_rejected() {
        assert_eq!(perturbation_mc(&z(&[0.0, 0.0]), 100, 0), Err(Error::ZeroZ));
        assert_eq!(
            explicit_bound_report(&z(&[0.0, 0.0]), 1, 1.0, 100, 0).unwrap_err(),
            Error::ZeroZ
        );
    }

    #[test]
    fn explicit_with_one_row_and_no_noise_matches_compressed_path() {
        let zz = z(&[0.2, -0.1, -0.1, 0.3, -0.3]);
        let e = explicit_bound_report(&zz, 1, 0.0, 20_000, 11).unwrap();
        let t = perturbation_mc(&zz, 20_000, 11).unwrap();
        assert!((e.report.empirical_mean_eps2 - t.unit_variance.empirical_mean_eps2).abs() < 1e-12);
        assert_eq!(e.report.bound, 0.0);
    }

    #[test]
    fn explicit_report_populates_fields() {
        let v: Vec<f64> = (0..16)
            .map(|i| {
                if i % 2 == 0 {
                    0.01 * i as f64
                } else {
                    -0.01 * (i - 1) as f64
                }
            })
            .collect();
        let e = explicit_bound_report(&z(&v), 4, 1.0, 10_000, 2).unwrap();
        assert!((e.report.bound - 0.04 / 16.0).abs() < 1e-15);
        assert!((e.shrunk_bound - 0.64 / 16.0).abs() < 1e-15);
        assert!(e.report.empirical_mean_eps2 > 0.0 && e.report.standard_error > 0.0);
    }
}
