//! Datasets with per-row group tags, conjunctive group queries, seeded
//! train/test splitting and the Beta-sampled synthetic demo.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::Matrix;
use crate::sampling::{self, rng_from_seed};

/// Feature matrix, real targets and per-row group tags (`"column=value"`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    features: Matrix,
    targets: Vec<f64>,
    tags: Vec<Vec<String>>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        features: Matrix,
        targets: Vec<f64>,
        tags: Vec<Vec<String>>,
    ) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        check_len(n, targets.len())?;
        check_len(n, tags.len())?;
        check_len(features.cols(), feature_names.len())?;
        if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("target {t}")));
        }
        Ok(Self {
            feature_names,
            features,
            targets,
            tags,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn tags(&self, i: usize) -> &[String] {
        &self.tags[i]
    }

    /// All distinct tags present in the dataset.
    pub fn tag_set(&self) -> BTreeSet<&str> {
        self.tags.iter().flatten().map(String::as_str).collect()
    }

    /// Indices of rows matched by `query`.
    pub fn select(&self, query: &GroupQuery) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| query.matches(&self.tags[i]))
            .collect()
    }

    /// Like [`Dataset::select`] but errors when nothing matches.
    pub fn select_nonempty(&self, query: &GroupQuery) -> Result<Vec<usize>> {
        let rows = self.select(query);
        if rows.is_empty() {
            Err(Error::EmptyGroup(query.to_string()))
        } else {
            Ok(rows)
        }
    }

    /// Copy of the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let d = self.n_features();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Self::new(
            self.feature_names.clone(),
            Matrix::from_row_major(rows.len(), d, data)?,
            rows.iter().map(|&i| self.targets[i]).collect(),
            rows.iter().map(|&i| self.tags[i].clone()).collect(),
        )
    }

    /// Same rows with different targets (used for residual fitting).
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self> {
        Self::new(
            self.feature_names.clone(),
            self.features.clone(),
            targets,
            self.tags.clone(),
        )
    }
}

/// Conjunction of tag requirements; a row matches when it carries every tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GroupQuery {
    tags: Vec<String>,
}

impl GroupQuery {
    pub fn new<S: Into<String>>(tags: impl IntoIterator<Item = S>) -> Result<Self> {
        let tags: Vec<String> = tags.into_iter().map(Into::into).collect();
        if tags.is_empty() {
            return Err(invalid("group query needs at least one tag"));
        }
        for t in &tags {
            if !t.contains('=') || t.starts_with('=') || t.contains('&') {
                return Err(invalid(format!(
                    "malformed tag `{t}`; expected column=value"
                )));
            }
        }
        Ok(Self { tags })
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn matches(&self, row_tags: &[String]) -> bool {
        self.tags.iter().all(|t| row_tags.contains(t))
    }
}

impl FromStr for GroupQuery {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::new(s.split('&').map(str::trim))
    }
}

impl TryFrom<String> for GroupQuery {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GroupQuery> for String {
    fn from(q: GroupQuery) -> String {
        q.to_string()
    }
}

impl fmt::Display for GroupQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tags.join("&"))
    }
}

/// One fairness constraint: equal expected output for groups `a` and `b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPair {
    pub a: GroupQuery,
    pub b: GroupQuery,
}

impl GroupPair {
    pub fn new(a: GroupQuery, b: GroupQuery) -> Self {
        Self { a, b }
    }
}

/// The list of constraints to enforce.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupSpec {
    pub pairs: Vec<GroupPair>,
}

impl GroupSpec {
    pub fn single(a: GroupQuery, b: GroupQuery) -> Self {
        Self {
            pairs: alloc::vec![GroupPair::new(a, b)],
        }
    }

    /// Checks every query selects at least one row of `data`.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(invalid("group spec has no constraints"));
        }
        for p in &self.pairs {
            data.select_nonempty(&p.a)?;
            data.select_nonempty(&p.b)?;
        }
        Ok(())
    }
}

/// Shuffles rows under `seed` and holds out `⌈n·test_fraction⌉` of them.
/// Each side keeps the original row order.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid("test fraction must lie in (0, 1)"));
    }
    let n = data.len();
    let n_test = libm::ceil(n as f64 * test_fraction) as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::EmptySplit { n, test: n_test });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let (test, train) = idx.split_at_mut(n_test);
    test.sort_unstable();
    train.sort_unstable();
    Ok((data.subset(train)?, data.subset(test)?))
}

/// Parameters of the two-population synthetic regression demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_per_group: usize,
    /// Beta shape parameters of group A's inputs.
    pub shape_a: (f64, f64),
    /// Beta shape parameters of group B's inputs.
    pub shape_b: (f64, f64),
    /// Frequency of the `x·cos(α x²)` term.
    pub alpha: f64,
    /// Frequency of the `sin(β x)` term.
    pub beta: f64,
    /// Standard deviation of additive Gaussian observation noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthParams {
    /// Beta(2, 3) for group A and Beta(3, 2) for group B.
    pub fn with_default_shapes(n_per_group: usize, alpha: f64, beta: f64, seed: u64) -> Self {
        Self {
            n_per_group,
            shape_a: (2.0, 3.0),
            shape_b: (3.0, 2.0),
            alpha,
            beta,
            noise_std: 0.0,
            seed,
        }
    }
}

/// `f(x) = x·cos(α x²) + sin(β x)`.
pub fn demo_function(x: f64, alpha: f64, beta: f64) -> f64 {
    x * libm::cos(alpha * x * x) + libm::sin(beta * x)
}

/// Group A rows first, then group B; single feature `x`, tags `group=A|B`.
pub fn synth_beta_demo(p: &SynthParams) -> Result<Dataset> {
    if p.n_per_group == 0 {
        return Err(invalid("n_per_group must be at least 1"));
    }
    for s in [p.shape_a.0, p.shape_a.1, p.shape_b.0, p.shape_b.1] {
        if !(s > 0.0) || !s.is_finite() {
            return Err(invalid("beta shape parameters must be positive"));
        }
    }
    if !(p.noise_std >= 0.0) || !p.alpha.is_finite() || !p.beta.is_finite() {
        return Err(invalid("noise must be nonnegative and frequencies finite"));
    }
    let mut rng = rng_from_seed(p.seed);
    let n = 2 * p.n_per_group;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    for (label, (a, b)) in [("group=A", p.shape_a), ("group=B", p.shape_b)] {
        for _ in 0..p.n_per_group {
            let x = sampling::beta(a, b, &mut rng)?;
            let mut y = demo_function(x, p.alpha, p.beta);
            if p.noise_std > 0.0 {
                y += p.noise_std * sampling::standard_normal(&mut rng);
            }
            xs.push(x);
            ys.push(y);
            tags.push(alloc::vec![label.to_string()]);
        }
    }
    Dataset::new(
        alloc::vec!["x".to_string()],
        Matrix::from_row_major(n, 1, xs)?,
        ys,
        tags,
    )
}
