//! Parallel Monte Carlo replication of simulated trials.
//!
//! Replicate `r` draws from its own generator seeded with `seed ^ r`, so the
//! result of a replicate never depends on how many ran before it or on which
//! worker ran it. Per-replicate results land in slots indexed by `r` and are
//! reduced in index order afterwards.

use iud_core::metrics::{inf_per_stratum, pw_metric, Estimator};
use iud_core::{run_trial, AllocationRule, Error, Scenario, TrialConfig, TrialTrace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Generator for replicate `replicate` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ replicate)
}

/// Simulates `replicates` trials in parallel and maps each trace through `f`.
/// The output is in replicate order.
pub fn map_replicates<T, F>(
    config: &TrialConfig,
    scenario: &Scenario,
    replicates: u64,
    f: F,
) -> Vec<Result<T, Error>>
where
    T: Send,
    F: Fn(u64, TrialTrace) -> Result<T, Error> + Sync,
{
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(config.seed, r);
            run_trial(config, scenario, &mut rng).and_then(|trace| f(r, trace))
        })
        .collect()
}

/// Label of the design: `CR` for constant `f`, otherwise the mechanism.
pub fn design_label(config: &TrialConfig) -> &'static str {
    if matches!(config.allocation, AllocationRule::Constant) {
        "CR"
    } else {
        config.mechanism.variant.label()
    }
}

pub const ESTIMATORS: [Estimator; 2] = [Estimator::Urn, Estimator::ThetaHat];

/// Metrics of one replicate at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMetrics {
    pub step: u64,
    /// `INF_{h,n}` per estimator (in [`ESTIMATORS`] order) and stratum.
    pub inf_h: [Vec<f64>; 2],
    pub pw: Option<f64>,
    pub pw_h: Vec<Option<f64>>,
}

impl CheckpointMetrics {
    pub fn inf(&self, estimator: usize) -> f64 {
        self.inf_h[estimator]
            .iter()
            .map(|e| e * e)
            .sum::<f64>()
            .sqrt()
    }
}

/// INF and PW of `trace` at every step in `checkpoints`.
pub fn replicate_metrics(
    trace: &TrialTrace,
    checkpoints: &[u64],
) -> Result<Vec<CheckpointMetrics>, Error> {
    checkpoints
        .iter()
        .map(|&step| {
            let inf_h = [
                inf_per_stratum(trace, step, ESTIMATORS[0])?,
                inf_per_stratum(trace, step, ESTIMATORS[1])?,
            ];
            let (pw, pw_h) = match pw_metric(trace, step) {
                Ok(m) => (Some(m.marginal), m.per_stratum),
                Err(Error::Undefined(_)) => (None, vec![None; trace.theta[0].len()]),
                Err(e) => return Err(e),
            };
            Ok(CheckpointMetrics {
                step,
                inf_h,
                pw,
                pw_h,
            })
        })
        .collect()
}

/// Mean and standard error of the defined values of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    /// `None` with fewer than two values.
    pub se: Option<f64>,
    pub count: u64,
}

impl Moments {
    /// `None` when no value is defined.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = (values.len() > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1.0) / n).sqrt()
        });
        Some(Self {
            mean,
            se,
            count: values.len() as u64,
        })
    }
}

/// One row of the long-format summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub mechanism: String,
    /// Empty for PW, which does not depend on an estimator.
    pub estimator: String,
    pub n: u64,
    pub metric: &'static str,
    /// 1-based; `None` for the marginal metric.
    pub stratum: Option<usize>,
    pub moments: Moments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub rows: Vec<SummaryRow>,
    pub replicates: u64,
    pub failures: Vec<(u64, String)>,
}

/// Replicates a design and summarizes INF and PW at each checkpoint.
///
/// Failed replicates are left out of the averages and listed in
/// `failures`.
pub fn run_monte_carlo(
    config: &TrialConfig,
    scenario: &Scenario,
    replicates: u64,
    checkpoints: &[u64],
) -> MetricsSummary {
    let results = map_replicates(config, scenario, replicates, |_, trace| {
        replicate_metrics(&trace, checkpoints)
    });
    summarize(config, scenario, replicates, checkpoints, results)
}

pub fn summarize(
    config: &TrialConfig,
    scenario: &Scenario,
    replicates: u64,
    checkpoints: &[u64],
    results: Vec<Result<Vec<CheckpointMetrics>, Error>>,
) -> MetricsSummary {
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(m) => ok.push(m),
            Err(e) => failures.push((r as u64, e.to_string())),
        }
    }
    let mechanism = design_label(config).to_string();
    let strata = config.num_strata;
    let mut rows = Vec::new();
    let mut push = |estimator: &str,
                    n: u64,
                    metric: &'static str,
                    stratum: Option<usize>,
                    m: Option<Moments>| {
        if let Some(moments) = m {
            rows.push(SummaryRow {
                scenario: scenario.name.clone(),
                mechanism: mechanism.clone(),
                estimator: estimator.to_string(),
                n,
                metric,
                stratum,
                moments,
            });
        }
    };
    for (c, &n) in checkpoints.iter().enumerate() {
        for (e, est) in ESTIMATORS.iter().enumerate() {
            push(
                est.as_str(),
                n,
                "INF",
                None,
                Moments::of(ok.iter().map(|m| m[c].inf(e))),
            );
            for h in 0..strata {
                push(
                    est.as_str(),
                    n,
                    "INF_h",
                    Some(h + 1),
                    Moments::of(ok.iter().map(|m| m[c].inf_h[e][h])),
                );
            }
        }
        push(
            "",
            n,
            "PW",
            None,
            Moments::of(ok.iter().filter_map(|m| m[c].pw)),
        );
        for h in 0..strata {
            push(
                "",
                n,
                "PW_h",
                Some(h + 1),
                Moments::of(ok.iter().filter_map(|m| m[c].pw_h[h])),
            );
        }
    }
    MetricsSummary {
        rows,
        replicates,
        failures,
    }
}
