//! CART regression trees: greedy variance-reduction splits, leaf routing,
//! per-leaf statistics and the leaf-indicator kernel.
//!
//! Routing sends `x[feature] <= threshold` left. Leaf indices run `0..L`
//! in left-to-right order.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, invalid, Error, Result};
use crate::sampling::rng_from_seed;

/// Closed interval; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "extended_real::lower")]
    pub lo: f64,
    #[serde(with = "extended_real::upper")]
    pub hi: f64,
}

impl Interval {
    pub const FULL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// JSON has no infinities; unbounded ends are written as `null`.
mod extended_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub mod lower {
        pub use super::serialize;
        use super::*;
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
        }
    }

    pub mod upper {
        pub use super::serialize;
        use super::*;
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafStat {
    /// Mean training target routed to the leaf.
    pub mean_target: f64,
    /// Number of training rows routed to the leaf.
    pub count: usize,
    /// Axis-aligned box, one interval per feature.
    pub bounds: Vec<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf_size: usize,
    /// Fraction of features considered at each split, in (0, 1].
    pub feature_subsample: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_leaf_size: 5,
            feature_subsample: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    n_features: usize,
    nodes: Vec<Node>,
    leaves: Vec<LeafStat>,
    params: TreeParams,
}

impl RegressionTree {
    /// Fits a tree by greedy weighted-variance reduction.
    ///
    /// Candidate thresholds are midpoints between consecutive distinct
    /// feature values. Equal gains resolve to the lowest feature index, then
    /// the lowest threshold. Rows are put in a canonical order first, so the
    /// result does not depend on row order. With `feature_subsample == 1.0`
    /// the seed is unused.
    pub fn fit(train: &Dataset, params: TreeParams, seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if params.min_leaf_size == 0 {
            return Err(invalid("min_leaf_size must be at least 1"));
        }
        if !(params.feature_subsample > 0.0 && params.feature_subsample <= 1.0) {
            return Err(invalid("feature_subsample must lie in (0, 1]"));
        }
        let d = train.n_features();
        let mut rows: Vec<usize> = (0..train.len()).collect();
        rows.sort_by(|&a, &b| {
            train
                .row(a)
                .iter()
                .zip(train.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(train.targets()[a].total_cmp(&train.targets()[b]))
        });

        let mut builder = Builder {
            data: train,
            params,
            n_candidates: if d == 0 {
                0
            } else {
                (libm::ceil(params.feature_subsample * d as f64) as usize).clamp(1, d)
            },
            rng: rng_from_seed(seed),
            nodes: Vec::new(),
            leaves: Vec::new(),
        };
        builder.build(rows, vec![Interval::FULL; d]);
        Ok(Self {
            n_features: d,
            nodes: builder.nodes,
            leaves: builder.leaves,
            params,
        })
    }

    /// Assembles a tree from explicit parts, checking that node 0 is the root,
    /// every node is reachable exactly once and leaf indices are `0..L`.
    pub fn from_parts(
        n_features: usize,
        nodes: Vec<Node>,
        leaves: Vec<LeafStat>,
        params: TreeParams,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(invalid("tree has no nodes"));
        }
        let mut seen_node = vec![false; nodes.len()];
        let mut seen_leaf = vec![false; leaves.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= nodes.len() || seen_node[i] {
                return Err(invalid("tree nodes do not form a tree"));
            }
            seen_node[i] = true;
            match nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features || !threshold.is_finite() {
                        return Err(invalid("split references an invalid feature or threshold"));
                    }
                    stack.push(right);
                    stack.push(left);
                }
                Node::Leaf { leaf } => {
                    if leaf >= leaves.len() || seen_leaf[leaf] {
                        return Err(invalid("leaf indices must be unique and contiguous"));
                    }
                    seen_leaf[leaf] = true;
                }
            }
        }
        if !seen_node.iter().all(|s| *s) || !seen_leaf.iter().all(|s| *s) {
            return Err(invalid("tree has unreachable nodes or leaves"));
        }
        for l in &leaves {
            check_len(n_features, l.bounds.len())?;
            if !l.mean_target.is_finite() {
                return Err(Error::NonFinite(alloc::format!(
                    "leaf mean {}",
                    l.mean_target
                )));
            }
        }
        Ok(Self {
            n_features,
            nodes,
            leaves,
            params,
        })
    }

    /// Balanced one-feature tree over ascending `thresholds` with the given
    /// leaf means and counts (`thresholds.len() + 1` leaves).
    pub fn piecewise_1d(thresholds: &[f64], means: &[f64], counts: &[usize]) -> Result<Self> {
        let n_leaves = thresholds.len() + 1;
        check_len(n_leaves, means.len())?;
        check_len(n_leaves, counts.len())?;
        if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("thresholds must be strictly increasing"));
        }
        let mut nodes = Vec::with_capacity(2 * n_leaves - 1);
        fn go(lo: usize, hi: usize, th: &[f64], nodes: &mut Vec<Node>) -> usize {
            // leaves lo..=hi
            let id = nodes.len();
            if lo == hi {
                nodes.push(Node::Leaf { leaf: lo });
                return id;
            }
            nodes.push(Node::Leaf { leaf: usize::MAX });
            let mid = (lo + hi) / 2;
            let left = go(lo, mid, th, nodes);
            let right = go(mid + 1, hi, th, nodes);
            nodes[id] = Node::Split {
                feature: 0,
                threshold: th[mid],
                left,
                right,
            };
            id
        }
        go(0, n_leaves - 1, thresholds, &mut nodes);
        let leaves = (0..n_leaves)
            .map(|j| LeafStat {
                mean_target: means[j],
                count: counts[j],
                bounds: vec![Interval {
                    lo: if j == 0 {
                        f64::NEG_INFINITY
                    } else {
                        thresholds[j - 1]
                    },
                    hi: if j == n_leaves - 1 {
                        f64::INFINITY
                    } else {
                        thresholds[j]
                    },
                }],
            })
            .collect();
        let params = TreeParams {
            max_depth: usize::MAX,
            min_leaf_size: 1,
            feature_subsample: 1.0,
        };
        Self::from_parts(1, nodes, leaves, params)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[LeafStat] {
        &self.leaves
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn leaf_means(&self) -> Vec<f64> {
        self.leaves.iter().map(|l| l.mean_target).collect()
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.leaves.iter().map(|l| l.count).collect()
    }

    /// Index of the leaf containing `x`.
    pub fn leaf_of(&self, x: &[f64]) -> Result<usize> {
        check_len(self.n_features, x.len())?;
        Ok(self.route(x))
    }

    fn route(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
                Node::Leaf { leaf } => return leaf,
            }
        }
    }

    /// Unconstrained prediction: the mean of the leaf containing `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.leaves[self.leaf_of(x)?].mean_target)
    }

    /// Leaf index of every row of `data`.
    pub fn route_rows(&self, data: &Dataset) -> Result<Vec<usize>> {
        check_len(self.n_features, data.n_features())?;
        Ok((0..data.len()).map(|i| self.route(data.row(i))).collect())
    }

    /// Degenerate leaf-indicator kernel: 1 when both points share a leaf.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(if self.leaf_of(a)? == self.leaf_of(b)? {
            1.0
        } else {
            0.0
        })
    }
}

/// Free-function form of [`RegressionTree::kernel`].
pub fn tree_kernel(tree: &RegressionTree, a: &[f64], b: &[f64]) -> Result<f64> {
    tree.kernel(a, b)
}

struct Builder<'a> {
    data: &'a Dataset,
    params: TreeParams,
    n_candidates: usize,
    rng: crate::sampling::Rng,
    nodes: Vec<Node>,
    leaves: Vec<LeafStat>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn build(&mut self, rows: Vec<usize>, bounds: Vec<Interval>) {
        // (node slot, rows, depth, box)
        let mut stack = vec![(self.push_placeholder(), rows, 0usize, bounds)];
        while let Some((slot, rows, depth, bounds)) = stack.pop() {
            match self.best_split(&rows, depth) {
                Some(c) => {
                    let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = rows
                        .iter()
                        .partition(|&&i| self.data.row(i)[c.feature] <= c.threshold);
                    let mut l_box = bounds.clone();
                    l_box[c.feature].hi = c.threshold;
                    let mut r_box = bounds;
                    r_box[c.feature].lo = c.threshold;
                    let left = self.push_placeholder();
                    let right = self.push_placeholder();
                    self.nodes[slot] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right,
                    };
                    // right pushed first so leaves are numbered left to right
                    stack.push((right, r_rows, depth + 1, r_box));
                    stack.push((left, l_rows, depth + 1, l_box));
                }
                None => {
                    let y = self.data.targets();
                    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
                    self.nodes[slot] = Node::Leaf {
                        leaf: self.leaves.len(),
                    };
                    self.leaves.push(LeafStat {
                        mean_target: mean,
                        count: rows.len(),
                        bounds,
                    });
                }
            }
        }
    }

    fn push_placeholder(&mut self) -> usize {
        self.nodes.push(Node::Leaf { leaf: usize::MAX });
        self.nodes.len() - 1
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.data.n_features();
        if self.n_candidates >= d {
            return (0..d).collect();
        }
        let mut f = index::sample(&mut self.rng, d, self.n_candidates).into_vec();
        f.sort_unstable();
        f
    }

    fn best_split(&mut self, rows: &[usize], depth: usize) -> Option<Candidate> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf_size;
        if depth >= self.params.max_depth || n < 2 * min_leaf {
            return None;
        }
        let y = self.data.targets();
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
        let sse: f64 = rows.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum();
        if !(sse > 0.0) {
            return None;
        }
        let mut best: Option<Candidate> = None;
        let mut order = rows.to_vec();
        for feature in self.candidate_features() {
            let x = |i: usize| self.data.row(i)[feature];
            order.copy_from_slice(rows);
            order.sort_by(|&a, &b| x(a).total_cmp(&x(b)));
            let total_s1: f64 = order.iter().map(|&i| y[i] - mean).sum();
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let mut s2_total = 0.0;
            for &i in &order {
                s2_total += (y[i] - mean) * (y[i] - mean);
            }
            for k in 1..n {
                let c = y[order[k - 1]] - mean;
                s1 += c;
                s2 += c * c;
                if k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let (lo, hi) = (x(order[k - 1]), x(order[k]));
                if !(lo < hi) {
                    continue;
                }
                let nl = k as f64;
                let nr = (n - k) as f64;
                let sse_l = s2 - s1 * s1 / nl;
                let r1 = total_s1 - s1;
                let sse_r = (s2_total - s2) - r1 * r1 / nr;
                let gain = sse - sse_l - sse_r;
                if best.as_ref().map_or(true, |b| gain > b.gain) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Candidate {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * sse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use alloc::string::ToString;

    fn dataset(x: &[&[f64]], y: &[f64]) -> Dataset {
        let d = x[0].len();
        let m = Matrix::from_rows(x).unwrap();
        let names = (0..d).map(|i| alloc::format!("x{i}")).collect();
        Dataset::new(names, m, y.to_vec(), vec![vec!["g=A".to_string()]; y.len()]).unwrap()
    }

    fn params(depth: usize, min_leaf: usize) -> TreeParams {
        TreeParams {
            max_depth: depth,
            min_leaf_size: min_leaf,
            feature_subsample: 1.0,
        }
    }

    #[test]
    fn constant_targets_single_leaf() {
        let d = dataset(&[&[0.0], &[1.0], &[2.0]], &[3.0, 3.0, 3.0]);
        let t = RegressionTree::fit(&d, params(5, 1), 0).unwrap();
        assert_eq!(t.n_leaves(), 1);
    }

    #[test]
    fn step_function_splits_at_midpoint() {
        let d = dataset(&[&[0.0], &[1.0], &[2.0], &[3.0]], &[0.0, 0.0, 10.0, 10.0]);
        let t = RegressionTree::fit(&d, params(5, 1), 0).unwrap();
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(
            t.nodes()[0],
            Node::Split {
                feature: 0,
                threshold: 1.5,
                left: 1,
                right: 2
            }
        );
        assert_eq!(t.leaf_means(), vec![0.0, 10.0]);
        assert_eq!(t.leaf_counts(), vec![2, 2]);
        assert_eq!(
            t.leaves()[0].bounds[0],
            Interval {
                lo: f64::NEG_INFINITY,
                hi: 1.5
            }
        );
        assert_eq!(t.leaf_of(&[1.0]).unwrap(), 0);
        assert_eq!(t.leaf_of(&[1.5]).unwrap(), 0);
        assert_eq!(t.leaf_of(&[1.6]).unwrap(), 1);
        assert_eq!(t.kernel(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(t.kernel(&[0.0], &[3.0]).unwrap(), 0.0);
    }

    #[test]
    fn depth_zero_is_global_mean() {
        let d = dataset(&[&[0.0], &[1.0], &[2.0], &[3.0]], &[0.0, 0.0, 10.0, 10.0]);
        let t = RegressionTree::fit(&d, params(0, 1), 0).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.leaf_means(), vec![5.0]);
        assert_eq!(t.leaf_of(&[100.0]).unwrap(), 0);
        assert_eq!(t.kernel(&[-5.0], &[100.0]).unwrap(), 1.0);
    }

    #[test]
    fn min_leaf_size_is_respected() {
        let x: Vec<[f64; 1]> = (0..20).map(|i| [i as f64]).collect();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64).collect();
        let t = RegressionTree::fit(&dataset(&xr, &y), params(10, 3), 0).unwrap();
        assert!(t.leaves().iter().all(|l| l.count >= 3));
        assert_eq!(t.leaf_counts().iter().sum::<usize>(), 20);
    }

    #[test]
    fn tie_prefers_lowest_feature() {
        // both features separate the targets identically
        let d = dataset(
            &[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]],
            &[0.0, 0.0, 1.0, 1.0],
        );
        let t = RegressionTree::fit(&d, params(1, 1), 0).unwrap();
        assert!(matches!(t.nodes()[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn dimension_mismatch_on_routing() {
        let d = dataset(&[&[0.0], &[1.0]], &[0.0, 1.0]);
        let t = RegressionTree::fit(&d, params(1, 1), 0).unwrap();
        assert!(matches!(
            t.leaf_of(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn piecewise_tree_routes_in_order() {
        let t =
            RegressionTree::piecewise_1d(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0, 3.0], &[1; 4]).unwrap();
        for (x, leaf) in [(0.5, 0), (1.0, 0), (1.5, 1), (2.5, 2), (9.0, 3)] {
            assert_eq!(t.leaf_of(&[x]).unwrap(), leaf);
        }
        assert!(RegressionTree::piecewise_1d(&[2.0, 1.0], &[0.0; 3], &[1; 3]).is_err());
    }

    #[test]
    fn from_parts_rejects_duplicate_leaf() {
        let leaf = LeafStat {
            mean_target: 0.0,
            count: 1,
            bounds: vec![Interval::FULL],
        };
        let nodes = vec![
            Node::Split {
                feature: 0,
                threshold: 0.0,
                left: 1,
                right: 2,
            },
            Node::Leaf { leaf: 0 },
            Node::Leaf { leaf: 0 },
        ];
        assert!(RegressionTree::from_parts(
            1,
            nodes,
            vec![leaf.clone(), leaf],
            TreeParams::default()
        )
        .is_err());
    }
}
