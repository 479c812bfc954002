//! Monte Carlo bound verification report.

use anyhow::Result;
use fairreg_core::bounds::{
    explicit_bound_report, perturbation_mc, sphere_beta_mc, sphere_coordinate_mc,
    ExplicitBoundReport, McEstimate, PerturbationBounds,
};
use fairreg_core::constraint::ZVector;
use serde::{Deserialize, Serialize};

/// Relative tolerance of the sphere check (the 3·SE allowance is added on top).
pub const SPHERE_REL_TOL: f64 = 0.02;
pub const SE_MULTIPLIER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereCheck {
    pub estimate: McEstimate,
    pub expected: f64,
    pub passed: bool,
    /// Same quantity through the Beta((L−1)/2, (L−1)/2) law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_estimate: Option<McEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub leaves: usize,
    pub samples: usize,
    pub seed: u64,
    pub sphere: SphereCheck,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_passed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<ExplicitBoundReport>,
    pub notes: Vec<String>,
    pub passed: bool,
}

/// Alternating `±1` entries (a trailing 0 when `L` is odd).
pub fn alternating_z(l: usize) -> Result<ZVector> {
    let mut v: Vec<f64> = (0..l)
        .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    if l % 2 == 1 {
        v[l - 1] = 0.0;
    }
    Ok(ZVector::new(v, None)?)
}

/// Runs the sphere check for `z.len()` leaves and, when `z` is nonzero, the
/// perturbation and explicit-representation reports. Seeds: sphere `seed`,
/// Beta form `seed + 1`, perturbation `seed + 2`, explicit `seed + 3`.
pub fn verify(
    z: &ZVector,
    samples: usize,
    seed: u64,
    leaf_count: usize,
    noise_variance: f64,
) -> Result<VerifyReport> {
    let l = z.len();
    anyhow::ensure!(l >= 1, "need at least one leaf");
    let expected = 1.0 / l as f64;
    let est = sphere_coordinate_mc(l, samples, seed)?;
    let beta_estimate = if l >= 2 {
        Some(sphere_beta_mc(l, samples, seed.wrapping_add(1))?)
    } else {
        None
    };
    let sphere = SphereCheck {
        passed: est.agrees_with(expected, SPHERE_REL_TOL, SE_MULTIPLIER),
        estimate: est,
        expected,
        beta_estimate,
    };
    let mut notes = Vec::new();
    let (perturbation, perturbation_passed, explicit) = if z.is_zero() {
        notes.push("constraint inactive, bounds vacuous".to_string());
        (None, None, None)
    } else {
        let t = perturbation_mc(z, samples, seed.wrapping_add(2))?;
        let ok = t.unit_variance.within_bound(SE_MULTIPLIER)
            && t.unit_sphere.within_bound(SE_MULTIPLIER);
        if (t.unit_variance.z_norm_ratio - 1.0).abs() < 1e-12 {
            notes.push("equal-magnitude z: the L1/L2 inequality is tight".to_string());
        }
        notes.push(
            "explicit-representation report is informational; its stated bound is not asserted"
                .to_string(),
        );
        let e =
            explicit_bound_report(z, leaf_count, noise_variance, samples, seed.wrapping_add(3))?;
        (Some(t), Some(ok), Some(e))
    };
    let passed = sphere.passed && perturbation_passed.unwrap_or(true);
    Ok(VerifyReport {
        leaves: l,
        samples,
        seed,
        sphere,
        perturbation,
        perturbation_passed,
        explicit,
        notes,
        passed,
    })
}
