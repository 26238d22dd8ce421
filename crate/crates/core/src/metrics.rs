//! Two-arm performance measures: inferential error and share of patients on
//! the worse treatment.

use alloc::format;
use alloc::vec::Vec;

use libm::sqrt;

use crate::counts::ratio;
use crate::error::{Error, Result};
use crate::trial::{Snapshot, TrialTrace};

/// Point estimate of the per-stratum success probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Estimator {
    /// Urn proportion `P`.
    Urn,
    /// Raw success rate `θ̂`.
    ThetaHat,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Urn => "P",
            Estimator::ThetaHat => "theta_hat",
        }
    }
}

fn two_arm(trace: &TrialTrace, checkpoint: u64) -> Result<&Snapshot> {
    if trace.theta.len() != 2 {
        return Err(Error::UnsupportedMetric(format!(
            "two-arm metric requested for {} treatments",
            trace.theta.len()
        )));
    }
    trace
        .snapshot_at(checkpoint)
        .ok_or_else(|| Error::Config(format!("trace has no snapshot at step {checkpoint}")))
}

/// `|(est_1 - est_2) - (θ_1 - θ_2)|` for every stratum.
pub fn inf_per_stratum(
    trace: &TrialTrace,
    checkpoint: u64,
    estimator: Estimator,
) -> Result<Vec<f64>> {
    let snap = two_arm(trace, checkpoint)?;
    let theta = &trace.theta;
    let est = |j: usize, h: usize| match estimator {
        Estimator::Urn => snap.p[j][h],
        Estimator::ThetaHat => ratio(snap.counts.successes(j, h), snap.counts.assignments(j, h)),
    };
    Ok((0..snap.counts.num_strata())
        .map(|h| ((est(0, h) - est(1, h)) - (theta[0][h] - theta[1][h])).abs())
        .collect())
}

/// `INF_n = sqrt(Σ_h [(est_1 - est_2) - (θ_1 - θ_2)]²)`.
pub fn inf_metric(trace: &TrialTrace, checkpoint: u64, estimator: Estimator) -> Result<f64> {
    let errors = inf_per_stratum(trace, checkpoint, estimator)?;
    Ok(sqrt(errors.iter().map(|e| e * e).sum()))
}

/// Share of patients on the worse arm.
#[derive(Debug, Clone, PartialEq)]
pub struct PwMetric {
    /// `PW_{h,n}`; `None` for tied strata and strata with no patients.
    pub per_stratum: Vec<Option<f64>>,
    /// `Σ_h N_worst,h / Σ_h N_{.,h}` over strata that are not tied.
    pub marginal: f64,
}

pub fn pw_metric(trace: &TrialTrace, checkpoint: u64) -> Result<PwMetric> {
    let snap = two_arm(trace, checkpoint)?;
    let theta = &trace.theta;
    let counts = &snap.counts;
    let mut per_stratum = Vec::with_capacity(counts.num_strata());
    let mut worst_total = 0u64;
    let mut untied_total = 0u64;
    let mut any_untied = false;
    for (h, (t0, t1)) in theta[0].iter().zip(&theta[1]).enumerate() {
        let worst = if t0 < t1 {
            0
        } else if t0 > t1 {
            1
        } else {
            per_stratum.push(None);
            continue;
        };
        any_untied = true;
        let n = counts.stratum_assignments(h);
        let on_worst = counts.assignments(worst, h);
        worst_total += on_worst;
        untied_total += n;
        per_stratum.push((n > 0).then(|| on_worst as f64 / n as f64));
    }
    if !any_untied {
        return Err(Error::Undefined("every stratum has tied treatments".into()));
    }
    if untied_total == 0 {
        return Err(Error::Undefined(
            "no patients in strata with a worse treatment".into(),
        ));
    }
    Ok(PwMetric {
        per_stratum,
        marginal: worst_total as f64 / untied_total as f64,
    })
}
