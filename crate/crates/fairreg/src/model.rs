//! Versioned JSON model files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use fairreg_core::constraint::{ConstrainedTree, FairnessSpec, PreparedFairness};
use fairreg_core::data::Dataset;
use fairreg_core::kernelgp::{ConstrainedKernelSystem, KernelRegression};
use fairreg_core::tree::{RegressionTree, TreeParams};
use serde::{Deserialize, Serialize};

use crate::table::ColumnSpec;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tree,
    Forest,
    Boost,
    Gp,
}

/// A tree before or after its constraint has been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Member {
    Unconstrained(RegressionTree),
    Constrained(ConstrainedTree),
}

impl Member {
    pub fn tree(&self) -> &RegressionTree {
        match self {
            Member::Unconstrained(t) => t,
            Member::Constrained(c) => c.tree(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> fairreg_core::Result<f64> {
        match self {
            Member::Unconstrained(t) => t.predict(x),
            Member::Constrained(c) => c.predict(x),
        }
    }

    pub fn predict_unconstrained(&self, x: &[f64]) -> fairreg_core::Result<f64> {
        self.tree().predict(x)
    }

    pub fn constrained(&self) -> Option<&ConstrainedTree> {
        match self {
            Member::Constrained(c) => Some(c),
            Member::Unconstrained(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Tree(Member),
    Forest {
        members: Vec<Member>,
    },
    Boost {
        init: f64,
        learning_rate: f64,
        stages: Vec<Member>,
    },
    Gp(KernelRegression),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Tree(_) => ModelKind::Tree,
            Model::Forest { .. } => ModelKind::Forest,
            Model::Boost { .. } => ModelKind::Boost,
            Model::Gp(_) => ModelKind::Gp,
        }
    }

    /// Tree members in order; empty for GP models.
    pub fn members(&self) -> &[Member] {
        match self {
            Model::Tree(m) => std::slice::from_ref(m),
            Model::Forest { members } => members,
            Model::Boost { stages, .. } => stages,
            Model::Gp(_) => &[],
        }
    }
}

/// How the model was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeParams>,
    #[serde(default)]
    pub bootstrap: bool,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub columns: ColumnSpec,
    pub fit: FitRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fairness: Option<FairnessSpec>,
    pub model: Model,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelFile {
    pub fn new(columns: ColumnSpec, fit: FitRecord, model: Model) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_kind: model.kind(),
            columns,
            fit,
            fairness: None,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let probe: VersionProbe =
            serde_json::from_str(s).context("model file has no format_version")?;
        if probe.format_version != FORMAT_VERSION {
            bail!(
                "unsupported model format_version {} (expected {FORMAT_VERSION})",
                probe.format_version
            );
        }
        let m: ModelFile = serde_json::from_str(s).context("malformed model file")?;
        if m.model_kind != m.model.kind() {
            bail!(
                "model_kind {:?} does not match payload {:?}",
                m.model_kind,
                m.model.kind()
            );
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read model {}", path.display()))?;
        Self::from_json(&s)
    }

    pub fn is_constrained(&self) -> bool {
        self.fairness.is_some()
    }

    /// Builds a predictor; GP models are factorized here.
    pub fn predictor(&self) -> Result<Predictor<'_>> {
        let gp = match &self.model {
            Model::Gp(spec) => {
                let after = ConstrainedKernelSystem::fit(spec.clone())?;
                let before = if spec.measure.is_some() {
                    Some(ConstrainedKernelSystem::fit(KernelRegression {
                        measure: None,
                        ..spec.clone()
                    })?)
                } else {
                    None
                };
                Some((after, before))
            }
            _ => None,
        };
        Ok(Predictor {
            model: &self.model,
            gp,
        })
    }

    /// Re-applies the fairness constraint to every tree member (boosting
    /// stages independently) or attaches the signed measure to a GP.
    pub fn constrain(&mut self, train: &Dataset, spec: FairnessSpec) -> Result<()> {
        let prepared = PreparedFairness::new(train, spec.clone())?;
        let apply = |m: &Member| -> Result<Member> {
            Ok(Member::Constrained(prepared.constrain(m.tree())?))
        };
        self.model = match &self.model {
            Model::Tree(m) => Model::Tree(apply(m)?),
            Model::Forest { members } => Model::Forest {
                members: members.iter().map(apply).collect::<Result<_>>()?,
            },
            Model::Boost {
                init,
                learning_rate,
                stages,
            } => Model::Boost {
                init: *init,
                learning_rate: *learning_rate,
                stages: stages.iter().map(apply).collect::<Result<_>>()?,
            },
            Model::Gp(reg) => {
                let [pair] = spec.groups.pairs.as_slice() else {
                    bail!("GP models support exactly one group pair");
                };
                if spec.estimator != fairreg_core::groupmass::Estimator::Empirical {
                    bail!("GP models use the empirical measure only");
                }
                let q = fairreg_core::kernelgp::SignedMeasure::from_groups(train, pair)?;
                Model::Gp(KernelRegression {
                    measure: Some(q),
                    ..reg.clone()
                })
            }
        };
        self.fairness = Some(spec);
        Ok(())
    }
}

pub struct Predictor<'a> {
    model: &'a Model,
    gp: Option<(ConstrainedKernelSystem, Option<ConstrainedKernelSystem>)>,
}

impl Predictor<'_> {
    /// Prediction of the model as stored (constrained when applicable).
    pub fn predict(&self, x: &[f64]) -> fairreg_core::Result<f64> {
        self.eval(x, false)
    }

    /// Prediction with every constraint removed.
    pub fn predict_unconstrained(&self, x: &[f64]) -> fairreg_core::Result<f64> {
        self.eval(x, true)
    }

    fn eval(&self, x: &[f64], raw: bool) -> fairreg_core::Result<f64> {
        let one = |m: &Member| {
            if raw {
                m.predict_unconstrained(x)
            } else {
                m.predict(x)
            }
        };
        match self.model {
            Model::Tree(m) => one(m),
            Model::Forest { members } => {
                let mut s = 0.0;
                for m in members {
                    s += one(m)?;
                }
                Ok(s / members.len() as f64)
            }
            Model::Boost {
                init,
                learning_rate,
                stages,
            } => {
                let mut s = *init;
                for m in stages {
                    s += learning_rate * one(m)?;
                }
                Ok(s)
            }
            Model::Gp(_) => {
                let (after, before) = self
                    .gp
                    .as_ref()
                    .expect("gp systems built with the predictor");
                match (raw, before) {
                    (true, Some(b)) => b.predict_mean(x),
                    _ => after.predict_mean(x),
                }
            }
        }
    }
}
