//! Equality-constrained kernel regression.
//!
//! The integral observation `∫ q(x) f(x) dx = 0`, with `q = p_A − p_B`
//! represented as a signed discrete measure, is prepended to the training
//! observations. Its covariance entries are the quadrature sums
//! `Σ_a w_a K(x_a, x)` (row) and `Σ_a Σ_b w_a w_b K(x_a, x_b)` (corner). The
//! constraint row carries no noise.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupPair};
use crate::error::{check_len, invalid, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::tree::RegressionTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `amplitude · exp(−½ Σ_d ((a_d − b_d)/ℓ_d)²)`.
    Rbf {
        lengthscales: Vec<f64>,
        amplitude: f64,
    },
    /// Leaf indicator of a fitted tree.
    Tree(RegressionTree),
}

impl Kernel {
    pub fn rbf(lengthscales: Vec<f64>, amplitude: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0)) || !(amplitude > 0.0)
        {
            return Err(invalid("RBF lengthscales and amplitude must be positive"));
        }
        Ok(Self::Rbf {
            lengthscales,
            amplitude,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Rbf { lengthscales, .. } => lengthscales.len(),
            Self::Tree(t) => t.n_features(),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_len(self.dim(), a.len())?;
        check_len(self.dim(), b.len())?;
        Ok(match self {
            Self::Rbf {
                lengthscales,
                amplitude,
            } => {
                let r2: f64 = a
                    .iter()
                    .zip(b)
                    .zip(lengthscales)
                    .map(|((x, y), l)| ((x - y) / l) * ((x - y) / l))
                    .sum();
                amplitude * libm::exp(-0.5 * r2)
            }
            Self::Tree(t) => t.kernel(a, b)?,
        })
    }
}

/// Discrete signed measure `Σ_a w_a δ(x_a)` with zero total weight.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignedMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl SignedMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        check_len(points.len(), weights.len())?;
        let total: f64 = weights.iter().sum();
        if !(total.abs() <= 1e-9) {
            return Err(invalid(alloc::format!(
                "signed measure weights sum to {total:e}"
            )));
        }
        Ok(Self { points, weights })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Empirical `p_A − p_B` over the rows of `data`: weight `1/n_A` on rows
    /// of A and `−1/n_B` on rows of B (summed for rows in both).
    pub fn from_groups(data: &Dataset, pair: &GroupPair) -> Result<Self> {
        let a = data.select_nonempty(&pair.a)?;
        let b = data.select_nonempty(&pair.b)?;
        let mut w = vec![0.0; data.len()];
        for &i in &a {
            w[i] += 1.0 / a.len() as f64;
        }
        for &i in &b {
            w[i] -= 1.0 / b.len() as f64;
        }
        let (points, weights) = (0..data.len())
            .filter(|&i| w[i] != 0.0)
            .map(|i| (data.row(i).to_vec(), w[i]))
            .unzip();
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points
            .iter()
            .map(Vec::as_slice)
            .zip(self.weights.iter().copied())
    }
}

/// `∫ q(x) K(x, x0) dx = Σ_a w_a K(x_a, x0)`.
pub fn quadrature_row(kernel: &Kernel, q: &SignedMeasure, x0: &[f64]) -> Result<f64> {
    q.atoms().map(|(x, w)| Ok(w * kernel.eval(x, x0)?)).sum()
}

/// `∬ q(x) K(x, x') q(x') dx dx'`.
pub fn quadrature_corner(kernel: &Kernel, q: &SignedMeasure) -> Result<f64> {
    let mut s = 0.0;
    for (xa, wa) in q.atoms() {
        for (xb, wb) in q.atoms() {
            s += wa * wb * kernel.eval(xa, xb)?;
        }
    }
    Ok(s)
}

/// Everything needed to rebuild a fitted system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRegression {
    pub kernel: Kernel,
    pub inputs: Matrix,
    pub targets: Vec<f64>,
    /// `None` for plain (unconstrained) regression.
    pub measure: Option<SignedMeasure>,
    pub noise_variance: f64,
}

/// Factorized augmented covariance with the constraint row first.
#[derive(Debug, Clone)]
pub struct ConstrainedKernelSystem {
    spec: KernelRegression,
    matrix: Matrix,
    factor: Cholesky,
    alpha: Vec<f64>,
}

impl ConstrainedKernelSystem {
    pub fn fit(spec: KernelRegression) -> Result<Self> {
        let n = spec.inputs.rows();
        if n == 0 {
            return Err(crate::Error::EmptyDataset);
        }
        check_len(n, spec.targets.len())?;
        check_len(spec.kernel.dim(), spec.inputs.cols())?;
        if !(spec.noise_variance >= 0.0) {
            return Err(invalid("noise variance must be nonnegative"));
        }
        let offset = usize::from(spec.measure.is_some());
        let mut matrix = Matrix::zeros(n + offset, n + offset);
        if let Some(q) = &spec.measure {
            matrix[(0, 0)] = quadrature_corner(&spec.kernel, q)?;
            for i in 0..n {
                let r = quadrature_row(&spec.kernel, q, spec.inputs.row(i))?;
                matrix[(0, i + 1)] = r;
                matrix[(i + 1, 0)] = r;
            }
        }
        for i in 0..n {
            for j in 0..=i {
                let k = spec.kernel.eval(spec.inputs.row(i), spec.inputs.row(j))?;
                matrix[(i + offset, j + offset)] = k;
                matrix[(j + offset, i + offset)] = k;
            }
            matrix[(i + offset, i + offset)] += spec.noise_variance;
        }
        let factor = Cholesky::factor(&matrix)?;
        let mut obs = vec![0.0; offset];
        obs.extend_from_slice(&spec.targets);
        let alpha = factor.solve(&obs)?;
        Ok(Self {
            spec,
            matrix,
            factor,
            alpha,
        })
    }

    pub fn spec(&self) -> &KernelRegression {
        &self.spec
    }

    /// Augmented covariance (constraint row/column first when constrained).
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    fn cross_covariance(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = &self.spec;
        let mut k = Vec::with_capacity(self.alpha.len());
        if let Some(q) = &s.measure {
            k.push(quadrature_row(&s.kernel, q, x)?);
        }
        for i in 0..s.inputs.rows() {
            k.push(s.kernel.eval(s.inputs.row(i), x)?);
        }
        Ok(k)
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.cross_covariance(x)?, &self.alpha))
    }

    /// Posterior variance of the latent function at `x`, clamped at zero.
    pub fn predict_variance(&self, x: &[f64]) -> Result<f64> {
        let k = self.cross_covariance(x)?;
        let v = self.factor.solve_lower(&k)?;
        let var = self.spec.kernel.eval(x, x)? - dot(&v, &v);
        if var < -1e-9 {
            log::warn!("posterior variance {var:e} clamped to zero");
        }
        Ok(var.max(0.0))
    }
}

/// Fits `f | y, ∫qf = 0` with observation noise on the data rows only.
pub fn fit_constrained(
    kernel: Kernel,
    inputs: Matrix,
    targets: Vec<f64>,
    q: SignedMeasure,
    noise_variance: f64,
) -> Result<ConstrainedKernelSystem> {
    ConstrainedKernelSystem::fit(KernelRegression {
        kernel,
        inputs,
        targets,
        measure: Some(q),
        noise_variance,
    })
}

/// Plain kernel regression without the constraint row.
pub fn fit_unconstrained(
    kernel: Kernel,
    inputs: Matrix,
    targets: Vec<f64>,
    noise_variance: f64,
) -> Result<ConstrainedKernelSystem> {
    ConstrainedKernelSystem::fit(KernelRegression {
        kernel,
        inputs,
        targets,
        measure: None,
        noise_variance,
    })
}

pub fn predict_variance(system: &ConstrainedKernelSystem, x: &[f64]) -> Result<f64> {
    system.predict_variance(x)
}

/// Mean and covariance of `(a − b, a, b)` for jointly Gaussian `a`, `b` with
/// correlation `corr`. The covariance is singular: any two entries determine
/// the third.
pub fn difference_covariance(
    mean_a: f64,
    mean_b: f64,
    var_a: f64,
    var_b: f64,
    corr: f64,
) -> ([f64; 3], Matrix) {
    let cab = corr * libm::sqrt(var_a) * libm::sqrt(var_b);
    let rows = [
        [var_a + var_b - 2.0 * cab, var_a - cab, cab - var_b],
        [var_a - cab, var_a, cab],
        [cab - var_b, cab, var_b],
    ];
    (
        [mean_a - mean_b, mean_a, mean_b],
        Matrix::from_rows(&rows).expect("3x3"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rbf1() -> Kernel {
        Kernel::rbf(vec![0.5], 1.0).unwrap()
    }

    #[test]
    fn zero_measure_quadrature() {
        let q = SignedMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.0, 0.0]).unwrap();
        assert_eq!(quadrature_row(&rbf1(), &q, &[0.3]).unwrap(), 0.0);
        assert_eq!(
            quadrature_corner(&rbf1(), &SignedMeasure::empty()).unwrap(),
            0.0
        );
    }

    #[test]
    fn two_atom_row() {
        let k = rbf1();
        let q = SignedMeasure::new(vec![vec![0.0], vec![1.0]], vec![1.0, -1.0]).unwrap();
        let got = quadrature_row(&k, &q, &[0.3]).unwrap();
        let want = k.eval(&[0.0], &[0.3]).unwrap() - k.eval(&[1.0], &[0.3]).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn single_atom_corner_is_amplitude() {
        // not a zero-sum measure, so build it directly
        let q = SignedMeasure {
            points: vec![vec![0.2]],
            weights: vec![1.0],
        };
        assert_eq!(quadrature_corner(&rbf1(), &q).unwrap(), 1.0);
    }

    #[test]
    fn rejects_unbalanced_measure() {
        assert!(SignedMeasure::new(vec![vec![0.0]], vec![1.0]).is_err());
        assert!(Kernel::rbf(vec![0.0], 1.0).is_err());
    }

    #[test]
    fn difference_covariance_is_degenerate() {
        let (mu, k) = difference_covariance(1.0, 0.25, 2.0, 0.5, 0.3);
        assert_eq!(mu, [0.75, 1.0, 0.25]);
        assert!(k.is_symmetric(0.0));
        // (c, a, b) with c = a − b: K·(1, −1, 1) = 0
        let v = k.mul_vec(&[1.0, -1.0, 1.0]).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn variance_reverts_far_away_and_vanishes_at_noiseless_data() {
        let x = Matrix::from_row_major(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let sys = fit_unconstrained(rbf1(), x, vec![1.0, 0.0, -1.0], 0.0).unwrap();
        assert!((sys.predict_variance(&[50.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(sys.predict_variance(&[0.5]).unwrap() < 1e-6);
        assert!((sys.predict_mean(&[0.5]).unwrap() - 0.0).abs() < 1e-6);
    }
}
