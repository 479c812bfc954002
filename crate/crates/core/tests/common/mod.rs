#![allow(dead_code)]

use fairreg_core::constraint::{build_z, ZVector};
use fairreg_core::data::{Dataset, GroupQuery};
use fairreg_core::groupmass::empirical_masses;
use fairreg_core::linalg::Matrix;
use fairreg_core::sampling::{rng_from_seed, Rng};
use fairreg_core::tree::RegressionTree;
use rand::Rng as _;

/// One-feature data with rows at integer positions `0..L`, a piecewise tree
/// whose leaves are exactly those positions, and the empirical z for
/// `group=A` vs `group=B`.
pub struct Instance {
    pub data: Dataset,
    pub tree: RegressionTree,
    pub z: ZVector,
}

pub fn qa() -> GroupQuery {
    "group=A".parse().unwrap()
}

pub fn qb() -> GroupQuery {
    "group=B".parse().unwrap()
}

/// Leaf counts drawn from `1..=max_rows`; targets standard-normal-ish.
pub fn random_instance(l: usize, max_rows: usize, seed: u64) -> Instance {
    let mut rng = rng_from_seed(seed);
    loop {
        if let Some(inst) = try_instance(l, max_rows, &mut rng) {
            return inst;
        }
    }
}

fn try_instance(l: usize, max_rows: usize, rng: &mut Rng) -> Option<Instance> {
    let bias: f64 = rng.random_range(0.1..0.9);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut tags = Vec::new();
    for j in 0..l {
        // a per-leaf group skew so z is typically nonzero
        let p_a = (bias + 0.4 * (j as f64 / l as f64 - 0.5)).clamp(0.05, 0.95);
        for _ in 0..rng.random_range(1..=max_rows) {
            rows.push(vec![j as f64]);
            targets.push(rng.random_range(-2.0..2.0) + j as f64 * 0.01);
            let g = if rng.random_bool(p_a) { "A" } else { "B" };
            tags.push(vec![format!("group={g}")]);
        }
    }
    let data = Dataset::new(
        vec!["x".into()],
        Matrix::from_rows(&rows).unwrap(),
        targets,
        tags,
    )
    .unwrap();
    if data.select(&qa()).is_empty() || data.select(&qb()).is_empty() {
        return None;
    }
    let tree = tree_for(&data, l);
    let z = build_z(
        &empirical_masses(&tree, &data, &qa()).unwrap(),
        &empirical_masses(&tree, &data, &qb()).unwrap(),
    )
    .unwrap();
    Some(Instance { data, tree, z })
}

/// Piecewise tree with leaf `j` covering position `j`, statistics from `data`.
pub fn tree_for(data: &Dataset, l: usize) -> RegressionTree {
    let thresholds: Vec<f64> = (0..l - 1).map(|j| j as f64 + 0.5).collect();
    let mut sums = vec![0.0; l];
    let mut counts = vec![0usize; l];
    for i in 0..data.len() {
        let j = data.row(i)[0] as usize;
        sums[j] += data.targets()[i];
        counts[j] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    RegressionTree::piecewise_1d(&thresholds, &means, &counts).unwrap()
}

pub fn residual(z: &[f64], f: &[f64]) -> f64 {
    z.iter().zip(f).map(|(a, b)| a * b).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
