//! Averaged and boosted ensembles of individually constrained trees.
//!
//! Each member satisfies `∫(p_A − p_B) f_i = 0`, so any linear combination
//! of members (plus a constant) does too.

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::constraint::{ConstrainedTree, FairnessSpec, PreparedFairness};
use crate::data::{Dataset, GroupQuery};
use crate::error::{invalid, Result};
use crate::sampling::rng_from_seed;
use crate::tree::{RegressionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    /// Fit each tree on a bootstrap resample of the training rows.
    pub bootstrap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairForest {
    pub members: Vec<ConstrainedTree>,
}

impl FairForest {
    /// Mean of the members' corrected predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for m in &self.members {
            s += m.predict(x)?;
        }
        Ok(s / self.members.len() as f64)
    }

    pub fn predict_unconstrained(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for m in &self.members {
            s += m.predict_unconstrained(x)?;
        }
        Ok(s / self.members.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStage {
    pub tree: ConstrainedTree,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairBoost {
    /// Global mean of the training targets.
    pub init: f64,
    pub stages: Vec<BoostStage>,
}

impl FairBoost {
    /// Prediction using the first `n` stages.
    pub fn predict_prefix(&self, x: &[f64], n: usize) -> Result<f64> {
        let mut s = self.init;
        for st in self.stages.iter().take(n) {
            s += st.learning_rate * st.tree.predict(x)?;
        }
        Ok(s)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.predict_prefix(x, self.stages.len())
    }

    pub fn predict_unconstrained(&self, x: &[f64]) -> Result<f64> {
        let mut s = self.init;
        for st in &self.stages {
            s += st.learning_rate * st.tree.predict_unconstrained(x)?;
        }
        Ok(s)
    }
}

/// Unconstrained forest members. Tree `i` is fitted with seed `seed + i`,
/// on a bootstrap resample drawn from the same seed when enabled.
pub fn fit_forest_trees(
    train: &Dataset,
    params: &ForestParams,
    seed: u64,
) -> Result<Vec<RegressionTree>> {
    if params.n_trees == 0 {
        return Err(invalid("forest needs at least one tree"));
    }
    (0..params.n_trees)
        .map(|i| {
            let tree_seed = seed.wrapping_add(i as u64);
            if params.bootstrap {
                let mut rng = rng_from_seed(tree_seed);
                let rows: Vec<usize> = (0..train.len())
                    .map(|_| rng.random_range(0..train.len()))
                    .collect();
                RegressionTree::fit(&train.subset(&rows)?, params.tree, tree_seed)
            } else {
                RegressionTree::fit(train, params.tree, tree_seed)
            }
        })
        .collect()
}

/// Random-forest style ensemble whose members are constrained with leaf
/// masses from the full training set (not the resample).
pub fn fit_fair_forest(
    train: &Dataset,
    params: &ForestParams,
    fairness: &FairnessSpec,
    seed: u64,
) -> Result<FairForest> {
    let trees = fit_forest_trees(train, params, seed)?;
    let prepared = PreparedFairness::new(train, fairness.clone())?;
    let members = trees
        .iter()
        .map(|t| prepared.constrain(t))
        .collect::<Result<Vec<_>>>()?;
    Ok(FairForest { members })
}

fn check_boost(params: &BoostParams) -> Result<()> {
    if params.n_stages == 0 {
        return Err(invalid("boosting needs at least one stage"));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(invalid("learning rate must lie in (0, 1]"));
    }
    Ok(())
}

/// Plain squared-error boosting: returns the initial constant and the
/// stage trees. Stage `t` uses seed `seed + t`.
pub fn fit_boost_trees(
    train: &Dataset,
    params: &BoostParams,
    seed: u64,
) -> Result<(f64, Vec<RegressionTree>)> {
    check_boost(params)?;
    let y = train.targets();
    let init = y.iter().sum::<f64>() / y.len() as f64;
    let mut fitted: Vec<f64> = alloc::vec![init; y.len()];
    let mut stages = Vec::with_capacity(params.n_stages);
    for t in 0..params.n_stages {
        let residual: Vec<f64> = y.iter().zip(&fitted).map(|(yi, fi)| yi - fi).collect();
        let tree = RegressionTree::fit(
            &train.with_targets(residual)?,
            params.tree,
            seed.wrapping_add(t as u64),
        )?;
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += params.learning_rate * tree.predict(train.row(i))?;
        }
        stages.push(tree);
    }
    Ok((init, stages))
}

/// Squared-error gradient boosting where every stage is constrained before
/// the next stage's residuals are computed. Stage `t` uses seed `seed + t`.
pub fn fit_fair_boost(
    train: &Dataset,
    params: &BoostParams,
    fairness: &FairnessSpec,
    seed: u64,
) -> Result<FairBoost> {
    check_boost(params)?;
    let prepared = PreparedFairness::new(train, fairness.clone())?;
    let y = train.targets();
    let init = y.iter().sum::<f64>() / y.len() as f64;
    let mut fitted: Vec<f64> = alloc::vec![init; y.len()];
    let mut stages = Vec::with_capacity(params.n_stages);
    for t in 0..params.n_stages {
        let residual: Vec<f64> = y.iter().zip(&fitted).map(|(yi, fi)| yi - fi).collect();
        let tree = RegressionTree::fit(
            &train.with_targets(residual)?,
            params.tree,
            seed.wrapping_add(t as u64),
        )?;
        let constrained = prepared.constrain(&tree)?;
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += params.learning_rate * constrained.predict(train.row(i))?;
        }
        stages.push(BoostStage {
            tree: constrained,
            learning_rate: params.learning_rate,
        });
    }
    Ok(FairBoost { init, stages })
}

/// `mean(pred | A) − mean(pred | B)` over the rows of `data`.
pub fn group_mean_difference(
    data: &Dataset,
    a: &GroupQuery,
    b: &GroupQuery,
    mut predict: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let mut mean = |q: &GroupQuery| -> Result<f64> {
        let rows = data.select_nonempty(q)?;
        let mut s = 0.0;
        for &i in &rows {
            s += predict(data.row(i))?;
        }
        Ok(s / rows.len() as f64)
    };
    Ok(mean(a)? - mean(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::ConstraintConfig;
    use crate::data::{synth_beta_demo, GroupSpec, SynthParams};
    use crate::groupmass::Estimator;

    fn demo() -> Dataset {
        let mut p = SynthParams::with_default_shapes(150, 6.0, 9.0, 21);
        p.noise_std = 0.05;
        synth_beta_demo(&p).unwrap()
    }

    fn spec() -> FairnessSpec {
        FairnessSpec {
            groups: GroupSpec::single("group=A".parse().unwrap(), "group=B".parse().unwrap()),
            estimator: Estimator::Empirical,
            config: ConstraintConfig::default(),
        }
    }

    fn tree_params() -> TreeParams {
        TreeParams {
            max_depth: 4,
            min_leaf_size: 5,
            feature_subsample: 1.0,
        }
    }

    #[test]
    fn single_tree_forest_equals_constrained_tree() {
        let d = demo();
        let f = fit_fair_forest(
            &d,
            &ForestParams {
                n_trees: 1,
                tree: tree_params(),
                bootstrap: false,
            },
            &spec(),
            0,
        )
        .unwrap();
        let t = PreparedFairness::new(&d, spec())
            .unwrap()
            .constrain(&RegressionTree::fit(&d, tree_params(), 0).unwrap())
            .unwrap();
        for i in 0..d.len() {
            assert_eq!(f.predict(d.row(i)).unwrap(), t.predict(d.row(i)).unwrap());
        }
    }

    #[test]
    fn identical_members_average_to_member() {
        let d = demo();
        let f = fit_fair_forest(
            &d,
            &ForestParams {
                n_trees: 4,
                tree: tree_params(),
                bootstrap: false,
            },
            &spec(),
            3,
        )
        .unwrap();
        for i in 0..d.len() {
            let m = f.members[0].predict(d.row(i)).unwrap();
            assert!((f.predict(d.row(i)).unwrap() - m).abs() < 1e-14);
        }
    }

    #[test]
    fn boost_prefixes_stay_fair_and_rmse_decreases() {
        let d = demo();
        let b = fit_fair_boost(
            &d,
            &BoostParams {
                n_stages: 10,
                learning_rate: 0.3,
                tree: tree_params(),
            },
            &spec(),
            0,
        )
        .unwrap();
        let (qa, qb) = ("group=A".parse().unwrap(), "group=B".parse().unwrap());
        let mut last = f64::INFINITY;
        for n in 0..=10 {
            let diff = group_mean_difference(&d, &qa, &qb, |x| b.predict_prefix(x, n)).unwrap();
            assert!(diff.abs() <= 1e-8, "prefix {n}: {diff}");
            let mse = (0..d.len())
                .map(|i| (b.predict_prefix(d.row(i), n).unwrap() - d.targets()[i]).powi(2))
                .sum::<f64>()
                / d.len() as f64;
            assert!(mse <= last + 1e-12);
            last = mse;
        }
    }

    #[test]
    fn rejects_bad_params() {
        let d = demo();
        assert!(fit_fair_forest(
            &d,
            &ForestParams {
                n_trees: 0,
                tree: tree_params(),
                bootstrap: true
            },
            &spec(),
            0
        )
        .is_err());
        let bp = BoostParams {
            n_stages: 2,
            learning_rate: 1.5,
            tree: tree_params(),
        };
        assert!(fit_fair_boost(&d, &bp, &spec(), 0).is_err());
    }
}
