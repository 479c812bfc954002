//! Preparation of the ProPublica COMPAS two-year recidivism CSV.
//!
//! Row filter: `|days_b_screening_arrest| ≤ 30`, `is_recid ≠ −1`,
//! `c_charge_degree ≠ O` and `score_text ≠ N/A`. Features are age, sex,
//! prior and juvenile counts and charge degree; the target is
//! `decile_score`. Race is recoded to `AfricanAmerican` / `Other` so both
//! groups are expressible as single-tag queries.

use anyhow::{Context, Result};

use crate::table::{ColumnSpec, Table};

pub const TARGET: &str = "decile_score";
pub const GROUP: &str = "race";
pub const FEATURES: [&str; 7] = [
    "age",
    "sex_male",
    "priors_count",
    "juv_fel_count",
    "juv_misd_count",
    "juv_other_count",
    "charge_felony",
];

pub fn column_spec() -> ColumnSpec {
    ColumnSpec {
        features: FEATURES.iter().map(|s| s.to_string()).collect(),
        target: TARGET.to_string(),
        groups: vec![GROUP.to_string()],
    }
}

pub fn prepare(raw: &Table) -> Result<Table> {
    let col = |n: &str| {
        raw.column_index(n)
            .with_context(|| format!("COMPAS input lacks `{n}`"))
    };
    let days = col("days_b_screening_arrest")?;
    let is_recid = col("is_recid")?;
    let degree = col("c_charge_degree")?;
    let score_text = col("score_text")?;
    let age = col("age")?;
    let sex = col("sex")?;
    let priors = col("priors_count")?;
    let juv = [
        col("juv_fel_count")?,
        col("juv_misd_count")?,
        col("juv_other_count")?,
    ];
    let decile = col(TARGET)?;
    let race = col("race")?;
    let mut rows = Vec::new();
    for r in &raw.rows {
        let Ok(d) = r[days].parse::<f64>() else {
            continue;
        };
        if d.abs() > 30.0 || r[is_recid] == "-1" || r[degree] == "O" || r[score_text] == "N/A" {
            continue;
        }
        let mut out = vec![
            r[age].clone(),
            u8::from(r[sex] == "Male").to_string(),
            r[priors].clone(),
        ];
        out.extend(juv.iter().map(|&j| r[j].clone()));
        out.push(u8::from(r[degree] == "F").to_string());
        out.push(r[decile].clone());
        out.push(
            if r[race] == "African-American" {
                "AfricanAmerican"
            } else {
                "Other"
            }
            .to_string(),
        );
        rows.push(out);
    }
    let mut headers: Vec<String> = FEATURES.iter().map(|s| s.to_string()).collect();
    headers.push(TARGET.to_string());
    headers.push(GROUP.to_string());
    Ok(Table { headers, rows })
}
