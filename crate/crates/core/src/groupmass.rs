//! Per-leaf probability mass of each group, either counted from training
//! rows or integrated from a diagonal-covariance Gaussian mixture over the
//! leaf boxes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupQuery};
use crate::error::{check_len, invalid, Error, Result};
use crate::sampling::rng_from_seed;
use crate::tree::{Interval, RegressionTree};

/// How leaf masses are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Empirical,
    Gmm(GmmConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl GmmConfig {
    pub fn new(components: usize, seed: u64) -> Self {
        Self {
            components,
            seed,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

/// Standard normal CDF, `Φ(x) = erfc(−x/√2)/2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2)
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, evaluated on the tail that avoids cancellation.
fn normal_interval(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// Fraction of the rows selected by `query` that route to each leaf.
pub fn empirical_masses(
    tree: &RegressionTree,
    data: &Dataset,
    query: &GroupQuery,
) -> Result<Vec<f64>> {
    let rows = data.select_nonempty(query)?;
    let leaves = tree.route_rows(data)?;
    let mut counts = vec![0usize; tree.n_leaves()];
    for &i in &rows {
        counts[leaves[i]] += 1;
    }
    let n = rows.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGmm {
    pub components: Vec<GmmComponent>,
}

impl DiagonalGmm {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    fn log_component_densities(&self, x: &[f64], out: &mut [f64]) {
        const LN_2PI: f64 = 1.837_877_066_409_345_5;
        for (o, c) in out.iter_mut().zip(&self.components) {
            let mut s = libm::log(c.weight);
            for ((xi, m), v) in x.iter().zip(&c.mean).zip(&c.variance) {
                let d = xi - m;
                s -= 0.5 * (LN_2PI + libm::log(*v) + d * d / v);
            }
            *o = s;
        }
    }

    /// Mean log-density of the rows.
    pub fn mean_log_likelihood(&self, rows: &[&[f64]]) -> f64 {
        let mut buf = vec![0.0; self.components.len()];
        let total: f64 = rows
            .iter()
            .map(|x| {
                self.log_component_densities(x, &mut buf);
                log_sum_exp(&buf)
            })
            .sum();
        total / rows.len() as f64
    }

    /// Probability mass of the axis-aligned box.
    pub fn box_mass(&self, bounds: &[Interval]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let mut p = c.weight;
                for ((iv, m), v) in bounds.iter().zip(&c.mean).zip(&c.variance) {
                    let sd = libm::sqrt(*v);
                    p *= normal_interval((iv.lo - m) / sd, (iv.hi - m) / sd);
                }
                p
            })
            .sum()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

/// Fits a diagonal GMM by EM.
///
/// Centres start from farthest-point seeding (first centre drawn under
/// `seed`), variances start at the per-dimension data variance, and every
/// variance is floored at `1e-6 ×` that data variance. Iteration stops once
/// the mean log-likelihood improves by less than `tol`.
pub fn fit_gmm(
    rows: &[&[f64]],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<DiagonalGmm> {
    if k == 0 {
        return Err(invalid("GMM needs at least one component"));
    }
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    for r in rows {
        check_len(d, r.len())?;
    }
    let mut distinct: Vec<&[f64]> = rows.to_vec();
    distinct.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::DegenerateData(format!(
            "{} distinct rows for {k} mixture components",
            distinct.len()
        )));
    }

    let nf = n as f64;
    let data_mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let data_var: Vec<f64> = (0..d)
        .map(|j| {
            rows.iter()
                .map(|r| (r[j] - data_mean[j]) * (r[j] - data_mean[j]))
                .sum::<f64>()
                / nf
        })
        .collect();
    let floor: Vec<f64> = data_var.iter().map(|v| (1e-6 * v).max(1e-300)).collect();

    // farthest-point seeding over distinct rows
    let mut rng = rng_from_seed(seed);
    let mut centres: Vec<&[f64]> = vec![distinct[rng.random_range(0..distinct.len())]];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut nearest: Vec<f64> = distinct.iter().map(|r| sq(r, centres[0])).collect();
    while centres.len() < k {
        let mut best = 0;
        for (i, v) in nearest.iter().enumerate() {
            if *v > nearest[best] {
                best = i;
            }
        }
        let c = distinct[best];
        centres.push(c);
        for (v, r) in nearest.iter_mut().zip(&distinct) {
            *v = v.min(sq(r, c));
        }
    }

    let mut gmm = DiagonalGmm {
        components: centres
            .iter()
            .map(|c| GmmComponent {
                weight: 1.0 / k as f64,
                mean: c.to_vec(),
                variance: data_var
                    .iter()
                    .zip(&floor)
                    .map(|(v, f)| v.max(*f))
                    .collect(),
            })
            .collect(),
    };

    let mut resp = vec![0.0; n * k];
    let mut buf = vec![0.0; k];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..max_iter {
        // E-step
        let mut ll = 0.0;
        for (i, x) in rows.iter().enumerate() {
            gmm.log_component_densities(x, &mut buf);
            let lse = log_sum_exp(&buf);
            ll += lse;
            for c in 0..k {
                resp[i * k + c] = libm::exp(buf[c] - lse);
            }
        }
        ll /= nf;
        // M-step
        for (c, comp) in gmm.components.iter_mut().enumerate() {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if nk < 1e-12 {
                // starved component keeps its parameters with negligible weight
                comp.weight = 1e-12 / nf;
                continue;
            }
            comp.weight = nk / nf;
            for j in 0..d {
                let m = (0..n).map(|i| resp[i * k + c] * rows[i][j]).sum::<f64>() / nk;
                let v = (0..n)
                    .map(|i| resp[i * k + c] * (rows[i][j] - m) * (rows[i][j] - m))
                    .sum::<f64>()
                    / nk;
                comp.mean[j] = m;
                comp.variance[j] = v.max(floor[j]);
            }
        }
        let wsum: f64 = gmm.components.iter().map(|c| c.weight).sum();
        for comp in &mut gmm.components {
            comp.weight /= wsum;
        }
        if ll - prev < tol {
            break;
        }
        prev = ll;
    }
    Ok(gmm)
}

/// Mass of the mixture inside every leaf box of `tree`.
pub fn gmm_leaf_masses(gmm: &DiagonalGmm, tree: &RegressionTree) -> Result<Vec<f64>> {
    check_len(tree.n_features(), gmm.dim())?;
    Ok(tree
        .leaves()
        .iter()
        .map(|l| gmm.box_mass(&l.bounds))
        .collect())
}

/// A group's input distribution, ready to be integrated over any tree's leaves.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupDensity {
    /// Training rows of the group (feature vectors).
    Empirical(Vec<Vec<f64>>),
    Gmm(DiagonalGmm),
}

impl GroupDensity {
    pub fn fit(data: &Dataset, query: &GroupQuery, estimator: &Estimator) -> Result<Self> {
        let rows = data.select_nonempty(query)?;
        match estimator {
            Estimator::Empirical => Ok(Self::Empirical(
                rows.iter().map(|&i| data.row(i).to_vec()).collect(),
            )),
            Estimator::Gmm(cfg) => {
                let sel: Vec<&[f64]> = rows.iter().map(|&i| data.row(i)).collect();
                fit_gmm(&sel, cfg.components, cfg.seed, cfg.max_iter, cfg.tol).map(Self::Gmm)
            }
        }
    }

    pub fn leaf_masses(&self, tree: &RegressionTree) -> Result<Vec<f64>> {
        match self {
            Self::Empirical(rows) => {
                let mut counts = vec![0usize; tree.n_leaves()];
                for r in rows {
                    counts[tree.leaf_of(r)?] += 1;
                }
                let n = rows.len() as f64;
                Ok(counts.into_iter().map(|c| c as f64 / n).collect())
            }
            Self::Gmm(g) => gmm_leaf_masses(g, tree),
        }
    }
}

/// Leaf masses of several groups on one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMassProfile {
    pub estimator: Estimator,
    pub masses: Vec<(GroupQuery, Vec<f64>)>,
}

impl GroupMassProfile {
    pub fn compute(
        tree: &RegressionTree,
        data: &Dataset,
        queries: &[GroupQuery],
        estimator: Estimator,
    ) -> Result<Self> {
        let masses = queries
            .iter()
            .map(|q| {
                Ok((
                    q.clone(),
                    GroupDensity::fit(data, q, &estimator)?.leaf_masses(tree)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { estimator, masses })
    }

    pub fn get(&self, query: &GroupQuery) -> Option<&[f64]> {
        self.masses
            .iter()
            .find(|(q, _)| q == query)
            .map(|(_, m)| m.as_slice())
    }
}
