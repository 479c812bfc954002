//! Before/after fairness audit of a model on a dataset.

use std::path::{Path, PathBuf};

use anyhow::Result;
use fairreg_core::data::{Dataset, GroupPair, GroupQuery};
use serde::{Deserialize, Serialize};

use crate::model::{ModelFile, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAudit {
    pub query: GroupQuery,
    pub n_rows: usize,
    pub mean_before: f64,
    pub mean_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintAudit {
    pub pair: GroupPair,
    /// `mean(pred | a) − mean(pred | b)` without the constraint.
    pub residual_before: f64,
    /// The same difference for the model as stored.
    pub residual_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub query: GroupQuery,
    pub stage: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub model_kind: ModelKind,
    pub constrained: bool,
    pub n_rows: usize,
    pub groups: Vec<GroupAudit>,
    pub constraints: Vec<ConstraintAudit>,
    /// Largest `|zᵀf|` over tree members and stored constraint columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_member_residual: Option<f64>,
    /// `sqrt(mean((after − before)²))` over all rows.
    pub rms_perturbation: f64,
    pub histograms: Vec<Histogram>,
}

/// Predictions before and after the constraint for every row.
pub struct Predictions {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

pub fn predict_all(model: &ModelFile, data: &Dataset) -> Result<Predictions> {
    let p = model.predictor()?;
    let mut before = Vec::with_capacity(data.len());
    let mut after = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        before.push(p.predict_unconstrained(data.row(i))?);
        after.push(p.predict(data.row(i))?);
    }
    Ok(Predictions { before, after })
}

fn mean_over(rows: &[usize], v: &[f64]) -> f64 {
    rows.iter().map(|&i| v[i]).sum::<f64>() / rows.len() as f64
}

fn histogram(values: impl Iterator<Item = f64>, edges: &[f64]) -> Vec<usize> {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut counts = vec![0; bins];
    for v in values {
        let b = if hi > lo {
            (((v - lo) / (hi - lo)) * bins as f64).floor() as isize
        } else {
            0
        };
        counts[b.clamp(0, bins as isize - 1) as usize] += 1;
    }
    counts
}

pub fn audit(
    model: &ModelFile,
    data: &Dataset,
    pairs: &[GroupPair],
    bins: usize,
) -> Result<AuditReport> {
    anyhow::ensure!(bins >= 1, "need at least one histogram bin");
    let pred = predict_all(model, data)?;
    let mut queries: Vec<GroupQuery> = Vec::new();
    for p in pairs {
        for q in [&p.a, &p.b] {
            if !queries.contains(q) {
                queries.push(q.clone());
            }
        }
    }
    let rows: Vec<Vec<usize>> = queries
        .iter()
        .map(|q| data.select_nonempty(q))
        .collect::<fairreg_core::Result<_>>()?;
    let groups = queries
        .iter()
        .zip(&rows)
        .map(|(q, r)| GroupAudit {
            query: q.clone(),
            n_rows: r.len(),
            mean_before: mean_over(r, &pred.before),
            mean_after: mean_over(r, &pred.after),
        })
        .collect::<Vec<_>>();
    let find = |q: &GroupQuery| {
        groups
            .iter()
            .find(|g| &g.query == q)
            .expect("query audited")
    };
    let constraints = pairs
        .iter()
        .map(|p| {
            let (a, b) = (find(&p.a), find(&p.b));
            ConstraintAudit {
                pair: p.clone(),
                residual_before: a.mean_before - b.mean_before,
                residual_after: a.mean_after - b.mean_after,
            }
        })
        .collect();
    let max_member_residual = model
        .model
        .members()
        .iter()
        .filter_map(|m| m.constrained())
        .flat_map(|c| c.residuals())
        .map(f64::abs)
        .reduce(f64::max);
    let n = data.len();
    let rms = (pred
        .before
        .iter()
        .zip(&pred.after)
        .map(|(b, a)| (a - b).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let all = pred.before.iter().chain(&pred.after);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let edges: Vec<f64> = (0..=bins)
        .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
        .collect();
    let mut histograms = Vec::new();
    for (q, r) in queries.iter().zip(&rows) {
        for (stage, v) in [("before", &pred.before), ("after", &pred.after)] {
            histograms.push(Histogram {
                query: q.clone(),
                stage: stage.to_string(),
                edges: edges.clone(),
                counts: histogram(r.iter().map(|&i| v[i]), &edges),
            });
        }
    }
    Ok(AuditReport {
        model_kind: model.model_kind,
        constrained: model.is_constrained(),
        n_rows: n,
        groups,
        constraints,
        max_member_residual,
        rms_perturbation: rms,
        histograms,
    })
}

/// Side files next to `report`: `<stem>_hist.csv` and `<stem>_points.csv`.
pub fn side_paths(report: &Path) -> (PathBuf, PathBuf) {
    let stem = report
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("audit");
    let dir = report.parent().unwrap_or(Path::new(""));
    (
        dir.join(format!("{stem}_hist.csv")),
        dir.join(format!("{stem}_points.csv")),
    )
}

pub fn write_histograms(report: &AuditReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "stage", "bin_lo", "bin_hi", "count"])?;
    for h in &report.histograms {
        for (k, c) in h.counts.iter().enumerate() {
            w.write_record([
                h.query.to_string(),
                h.stage.clone(),
                h.edges[k].to_string(),
                h.edges[k + 1].to_string(),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_points(data: &Dataset, pred: &Predictions, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "tags", "before", "after"])?;
    for i in 0..data.len() {
        w.write_record([
            i.to_string(),
            data.tags(i).join("&"),
            pred.before[i].to_string(),
            pred.after[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
