//! Equal-expectation constraints on regression trees.
//!
//! A tree is a kernel regressor whose kernel is the leaf indicator. Adding
//! the noiseless observation `Σ_j z_j f_j = 0` borders the (block) diagonal
//! kernel matrix with `z`, and the bordered inverse is the block inverse
//! plus a rank-1 term. Every corrected leaf value is therefore an additive,
//! O(L) update of the original leaf value:
//!
//! * compressed (one pseudo-observation per leaf):
//!   `f_j = s·(y_j − z_j·Σz_i y_i / Σz_i²)` with `s = 1/(1+σ²)`,
//!   and `s` dropped when the prior factor is removed;
//! * explicit (one observation per training row, `m_j` rows in leaf `j`):
//!   `f_j = X1_j + ρ·X2_j·X3` with `X1_j = m_j y_j/(m_j+σ²)`,
//!   `X2_j = m_j z_j/(m_j+σ²)`, `X3 = Σ z_j X1_j` and
//!   `ρ = −1/Σ_j m_j z_j²/(m_j+σ²)`;
//! * several constraints: `f = s·(y − Q Qᵀ y)` with `Q` an orthonormal
//!   basis of the independent columns of `Z`.
//!
//! The rank-1 term is subtractive (`ρ < 0`); that is the sign for which
//! `zᵀf = 0` holds.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupPair, GroupSpec};
use crate::error::{check_len, invalid, Error, Result};
use crate::groupmass::{Estimator, GroupDensity};
use crate::linalg::{self, dot, Matrix, DEFAULT_RANK_TOL};
use crate::tree::RegressionTree;

/// Below this squared norm `z` is treated as zero and the constraint is inactive.
pub const ZERO_Z_SQ_NORM: f64 = 1e-14;
/// Tolerance on the normalisation of mass vectors and on `Σ z = 0`.
pub const MASS_TOL: f64 = 1e-9;

/// Per-leaf difference between two groups' leaf masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZVector {
    entries: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<GroupPair>,
}

impl ZVector {
    /// Wraps raw entries, which must sum to zero within [`MASS_TOL`].
    pub fn new(entries: Vec<f64>, source: Option<GroupPair>) -> Result<Self> {
        let sum: f64 = entries.iter().sum();
        if !(sum.abs() <= MASS_TOL) {
            return Err(invalid(alloc::format!(
                "z entries sum to {sum:e}, expected 0"
            )));
        }
        Ok(Self { entries, source })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn source(&self) -> Option<&GroupPair> {
        self.source.as_ref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sq_norm(&self) -> f64 {
        dot(&self.entries, &self.entries)
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.sq_norm())
    }

    /// `‖z‖₁ / (√L·‖z‖₂)`, which lies in (0, 1] for nonzero `z`.
    pub fn norm_ratio(&self) -> f64 {
        self.l1_norm() / (libm::sqrt(self.len() as f64) * self.l2_norm())
    }

    pub fn is_zero(&self) -> bool {
        self.sq_norm() < ZERO_Z_SQ_NORM
    }
}

/// `z = masses_a − masses_b`.
pub fn build_z(masses_a: &[f64], masses_b: &[f64]) -> Result<ZVector> {
    check_len(masses_a.len(), masses_b.len())?;
    for m in [masses_a, masses_b] {
        let s: f64 = m.iter().sum();
        if !((s - 1.0).abs() <= MASS_TOL) {
            return Err(invalid(alloc::format!(
                "leaf masses sum to {s}, expected 1"
            )));
        }
    }
    ZVector::new(
        masses_a.iter().zip(masses_b).map(|(a, b)| a - b).collect(),
        None,
    )
}

/// One z column per constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZMatrix {
    columns: Vec<ZVector>,
}

impl ZMatrix {
    pub fn new(columns: Vec<ZVector>) -> Result<Self> {
        if columns.is_empty() {
            return Err(invalid("z matrix needs at least one column"));
        }
        let l = columns[0].len();
        for c in &columns {
            check_len(l, c.len())?;
        }
        Ok(Self { columns })
    }

    pub fn single(z: ZVector) -> Self {
        Self { columns: vec![z] }
    }

    pub fn columns(&self) -> &[ZVector] {
        &self.columns
    }

    pub fn n_leaves(&self) -> usize {
        self.columns[0].len()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_columns(&self.columns.iter().map(|c| c.entries()).collect::<Vec<_>>())
            .expect("columns have equal length")
    }

    /// `zᵀf` for every column.
    pub fn residuals(&self, values: &[f64]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| dot(c.entries(), values))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Compressed,
    Explicit,
}

/// Fixed parameters of a correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    pub representation: Representation,
    /// Observation noise variance σ² added to the kernel diagonal.
    pub noise_variance: f64,
    /// Compressed only: undo the `1/(1+σ²)` prior shrinkage.
    pub remove_prior: bool,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            representation: Representation::Compressed,
            noise_variance: 1.0,
            remove_prior: true,
        }
    }
}

impl ConstraintConfig {
    pub fn explicit(noise_variance: f64) -> Self {
        Self {
            representation: Representation::Explicit,
            noise_variance,
            remove_prior: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub constraint_active: bool,
    /// Constraint columns dropped as linearly dependent.
    pub dropped_constraints: Vec<usize>,
    /// Border coefficient ρ (single-constraint paths).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// `zᵀD⁻¹y` (single-constraint paths).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x3: Option<f64>,
}

/// A tree with precomputed constrained leaf values.
///
/// `values[j] = base[j] + correction[j]`, where `base` is the leaf mean
/// (after noise shrinkage where applicable) and `correction` is the rank-1
/// constraint term. Only O(L) state is added to the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedTree {
    tree: RegressionTree,
    z: ZMatrix,
    config: ConstraintConfig,
    values: Vec<f64>,
    correction: Vec<f64>,
    diagnostics: Diagnostics,
}

impl ConstrainedTree {
    pub fn tree(&self) -> &RegressionTree {
        &self.tree
    }

    pub fn z(&self) -> &ZMatrix {
        &self.z
    }

    pub fn config(&self) -> &ConstraintConfig {
        &self.config
    }

    pub fn noise_variance(&self) -> f64 {
        self.config.noise_variance
    }

    pub fn representation(&self) -> Representation {
        self.config.representation
    }

    /// Corrected per-leaf predictions.
    pub fn leaf_values(&self) -> &[f64] {
        &self.values
    }

    /// Additive constraint term per leaf.
    pub fn correction(&self) -> &[f64] {
        &self.correction
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.values[self.tree.leaf_of(x)?])
    }

    pub fn predict_unconstrained(&self, x: &[f64]) -> Result<f64> {
        self.tree.predict(x)
    }

    /// `zᵀf` for every original constraint column.
    pub fn residuals(&self) -> Vec<f64> {
        self.z.residuals(&self.values)
    }
}

fn check_noise(noise_variance: f64) -> Result<()> {
    if noise_variance >= 0.0 && noise_variance.is_finite() {
        Ok(())
    } else {
        Err(invalid("noise variance must be finite and nonnegative"))
    }
}

/// Compressed-representation correction (one pseudo-observation per leaf).
pub fn constrain_compressed(
    tree: &RegressionTree,
    z: &ZVector,
    noise_variance: f64,
    remove_prior: bool,
) -> Result<ConstrainedTree> {
    check_len(tree.n_leaves(), z.len())?;
    check_noise(noise_variance)?;
    if tree.leaves().iter().all(|l| l.count == 0) {
        return Err(invalid("every leaf is empty"));
    }
    let config = ConstraintConfig {
        representation: Representation::Compressed,
        noise_variance,
        remove_prior,
    };
    let y = tree.leaf_means();
    // D = (1+σ²)I, so D⁻¹ = s·I
    let s = 1.0 / (1.0 + noise_variance);
    let out_scale = if remove_prior {
        1.0 + noise_variance
    } else {
        1.0
    };
    let mut diagnostics = Diagnostics::default();
    let mut values: Vec<f64> = y.iter().map(|v| v * s * out_scale).collect();
    let mut correction = vec![0.0; y.len()];
    if z.is_zero() {
        log::info!("z is zero; constraint inactive");
    } else {
        let zd = z.entries();
        let rho = -1.0 / (s * z.sq_norm());
        let x3 = s * dot(zd, &y);
        for j in 0..y.len() {
            // u_j = s·z_j; the update is ρ·u_j·(uᵀ[y; 0])
            let c = rho * (s * zd[j]) * x3 * out_scale;
            correction[j] = c;
            values[j] += c;
        }
        diagnostics = Diagnostics {
            constraint_active: true,
            rho: Some(rho),
            x3: Some(x3),
            ..Default::default()
        };
    }
    Ok(ConstrainedTree {
        tree: tree.clone(),
        z: ZMatrix::single(z.clone()),
        config,
        values,
        correction,
        diagnostics,
    })
}

/// Explicit-representation correction (one observation per training row),
/// computed in a single pass over the leaves.
pub fn constrain_explicit(
    tree: &RegressionTree,
    z: &ZVector,
    noise_variance: f64,
) -> Result<ConstrainedTree> {
    check_len(tree.n_leaves(), z.len())?;
    check_noise(noise_variance)?;
    let leaves = tree.leaves();
    if leaves.iter().any(|l| l.count == 0) {
        return Err(invalid(
            "explicit representation needs at least one row per leaf",
        ));
    }
    if noise_variance == 0.0 && leaves.iter().any(|l| l.count > 1) {
        return Err(Error::DegenerateNoise);
    }
    let config = ConstraintConfig::explicit(noise_variance);
    let zd = z.entries();
    let mut values = Vec::with_capacity(leaves.len());
    let mut x2 = Vec::with_capacity(leaves.len());
    let mut x3 = 0.0;
    let mut border = 0.0;
    for (l, &zj) in leaves.iter().zip(zd) {
        let m = l.count as f64;
        let w = m / (m + noise_variance);
        let x1 = w * l.mean_target;
        values.push(x1);
        x2.push(w * zj);
        x3 += zj * x1;
        border += w * zj * zj;
    }
    let mut correction = vec![0.0; leaves.len()];
    let mut diagnostics = Diagnostics::default();
    if z.is_zero() {
        log::info!("z is zero; constraint inactive");
    } else {
        let rho = -1.0 / border;
        for ((v, c), x2j) in values.iter_mut().zip(&mut correction).zip(&x2) {
            *c = rho * x2j * x3;
            *v += *c;
        }
        diagnostics = Diagnostics {
            constraint_active: true,
            rho: Some(rho),
            x3: Some(x3),
            ..Default::default()
        };
    }
    Ok(ConstrainedTree {
        tree: tree.clone(),
        z: ZMatrix::single(z.clone()),
        config,
        values,
        correction,
        diagnostics,
    })
}

/// Several simultaneous constraints in compressed form. Linearly dependent
/// columns are dropped (and reported); the remaining ones are enforced by
/// projecting the leaf values onto the null space of `Zᵀ`.
pub fn constrain_intersectional(
    tree: &RegressionTree,
    z: &ZMatrix,
    noise_variance: f64,
    remove_prior: bool,
) -> Result<ConstrainedTree> {
    check_len(tree.n_leaves(), z.n_leaves())?;
    check_noise(noise_variance)?;
    let config = ConstraintConfig {
        representation: Representation::Compressed,
        noise_variance,
        remove_prior,
    };
    let basis = linalg::rank_revealing_basis(&z.to_matrix(), DEFAULT_RANK_TOL)?;
    let scale = if remove_prior {
        1.0
    } else {
        1.0 / (1.0 + noise_variance)
    };
    let y = tree.leaf_means();
    let projected = basis.project_out(&y);
    let values: Vec<f64> = projected.iter().map(|v| v * scale).collect();
    let correction: Vec<f64> = values
        .iter()
        .zip(&y)
        .map(|(f, yj)| f - yj * scale)
        .collect();
    let dropped = basis.dropped(z.columns().len());
    if !dropped.is_empty() {
        log::info!("dropped {} dependent constraint column(s)", dropped.len());
    }
    let diagnostics = Diagnostics {
        constraint_active: !basis.retained.is_empty(),
        dropped_constraints: dropped,
        rho: None,
        x3: None,
    };
    Ok(ConstrainedTree {
        tree: tree.clone(),
        z: z.clone(),
        config,
        values,
        correction,
        diagnostics,
    })
}

/// Dispatches on the number of constraint columns and the representation.
pub fn constrain(
    tree: &RegressionTree,
    z: &ZMatrix,
    config: &ConstraintConfig,
) -> Result<ConstrainedTree> {
    match (z.columns(), config.representation) {
        ([single], Representation::Compressed) => {
            constrain_compressed(tree, single, config.noise_variance, config.remove_prior)
        }
        ([single], Representation::Explicit) => {
            constrain_explicit(tree, single, config.noise_variance)
        }
        (_, Representation::Compressed) => {
            constrain_intersectional(tree, z, config.noise_variance, config.remove_prior)
        }
        (_, Representation::Explicit) => Err(Error::Unsupported(
            "multiple constraints require the compressed representation".to_string(),
        )),
    }
}

/// Affine map of `values` onto [0, 1]; a constant input maps to 0.5.
pub fn rescale_unit_interval(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// What to constrain against: constraint pairs, leaf-mass estimator and
/// correction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub groups: GroupSpec,
    pub estimator: Estimator,
    pub config: ConstraintConfig,
}

/// Group densities fitted once on the training set, reusable across trees.
#[derive(Debug, Clone)]
pub struct PreparedFairness {
    spec: FairnessSpec,
    densities: Vec<(GroupDensity, GroupDensity)>,
}

impl PreparedFairness {
    pub fn new(data: &Dataset, spec: FairnessSpec) -> Result<Self> {
        spec.groups.validate(data)?;
        let densities = spec
            .groups
            .pairs
            .iter()
            .map(|p| {
                Ok((
                    GroupDensity::fit(data, &p.a, &spec.estimator)?,
                    GroupDensity::fit(data, &p.b, &spec.estimator)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, densities })
    }

    pub fn spec(&self) -> &FairnessSpec {
        &self.spec
    }

    /// z matrix of `tree` under the fitted group densities.
    pub fn z_matrix(&self, tree: &RegressionTree) -> Result<ZMatrix> {
        let cols = self
            .densities
            .iter()
            .zip(&self.spec.groups.pairs)
            .map(|((a, b), pair)| {
                let z = build_z(&a.leaf_masses(tree)?, &b.leaf_masses(tree)?)?;
                Ok(ZVector {
                    source: Some(pair.clone()),
                    ..z
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ZMatrix::new(cols)
    }

    pub fn constrain(&self, tree: &RegressionTree) -> Result<ConstrainedTree> {
        constrain(tree, &self.z_matrix(tree)?, &self.spec.config)
    }
}

/// Dense bordered systems solved by elimination, for cross-checking the
/// O(L) corrections. Cubic cost; meant for small instances.
pub mod reference {
    use super::*;

    /// `(L+1)×(L+1)` system `[[0, zᵀ], [z, (1+σ²)I]]` against `[0; y]`,
    /// constraint row first. Returns the corrected leaf values.
    pub fn compressed_dense(
        tree: &RegressionTree,
        z: &ZVector,
        noise_variance: f64,
        remove_prior: bool,
    ) -> Result<Vec<f64>> {
        let l = tree.n_leaves();
        check_len(l, z.len())?;
        let mut m = Matrix::zeros(l + 1, l + 1);
        for j in 0..l {
            m[(0, j + 1)] = z.entries()[j];
            m[(j + 1, 0)] = z.entries()[j];
            m[(j + 1, j + 1)] = 1.0 + noise_variance;
        }
        let mut rhs = vec![0.0];
        rhs.extend(tree.leaf_means());
        let alpha = linalg::lu_solve(&m, &rhs)?;
        // the prediction vector for leaf j is e_j (leaf kernel), 0 on the constraint
        let scale = if remove_prior {
            1.0 + noise_variance
        } else {
            1.0
        };
        Ok(alpha[1..].iter().map(|a| a * scale).collect())
    }

    /// `(n+1)×(n+1)` system over the individual training rows of `data`:
    /// block-diagonal leaf kernel plus `σ²I`, bordered by `b_i = z_{leaf(i)}`.
    pub fn explicit_dense(
        tree: &RegressionTree,
        data: &Dataset,
        z: &ZVector,
        noise_variance: f64,
    ) -> Result<Vec<f64>> {
        let l = tree.n_leaves();
        check_len(l, z.len())?;
        let leaf = tree.route_rows(data)?;
        let n = data.len();
        let mut m = Matrix::zeros(n + 1, n + 1);
        for i in 0..n {
            let b = z.entries()[leaf[i]];
            m[(0, i + 1)] = b;
            m[(i + 1, 0)] = b;
            for k in 0..n {
                if leaf[i] == leaf[k] {
                    m[(i + 1, k + 1)] = 1.0;
                }
            }
            m[(i + 1, i + 1)] += noise_variance;
        }
        let mut rhs = vec![0.0];
        rhs.extend_from_slice(data.targets());
        let alpha = linalg::lu_solve(&m, &rhs)?;
        let mut f = vec![0.0; l];
        for i in 0..n {
            f[leaf[i]] += alpha[i + 1];
        }
        Ok(f)
    }
}
