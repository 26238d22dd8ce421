//! The sequential trial loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::allocation::{
    allocation_probs_into, draw_assignment, draw_covariate, draw_outcome, validate_simplex,
    AllocationRule,
};
use crate::counts::{CountsTensor, TrialState};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::urn::{MechanismParams, UrnEngine};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialConfig {
    pub num_treatments: usize,
    pub num_strata: usize,
    pub horizon: u64,
    pub covariate_probs: Vec<f64>,
    /// Initial urn constant ς. Overrides `mechanism.mle.default_prior`.
    pub varsigma: f64,
    pub allocation: AllocationRule,
    pub mechanism: MechanismParams,
    pub seed: u64,
    /// Steps at which a snapshot is kept. The horizon is always included.
    pub checkpoints: Vec<u64>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            num_treatments: 2,
            num_strata: 5,
            horizon: 200,
            covariate_probs: vec![0.2; 5],
            varsigma: 1.0,
            allocation: AllocationRule::default(),
            mechanism: MechanismParams::default(),
            seed: 0,
            checkpoints: vec![50, 100, 200],
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_treatments < 2 {
            return Err(Error::Config("at least two treatments are required".into()));
        }
        if self.num_strata == 0 {
            return Err(Error::Config("at least one stratum is required".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.covariate_probs.len() != self.num_strata {
            return Err(Error::Config(format!(
                "covariate probabilities must have {} entries",
                self.num_strata
            )));
        }
        validate_simplex(&self.covariate_probs, "covariate probabilities")
            .map_err(|e| Error::Config(format!("{e}")))?;
        if !(self.varsigma > 0.0) || !self.varsigma.is_finite() {
            return Err(Error::Config("varsigma must be positive".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "checkpoints must be strictly ascending".into(),
            ));
        }
        if self.checkpoints.last().is_some_and(|&c| c > self.horizon) {
            return Err(Error::Config(
                "checkpoints must not exceed the horizon".into(),
            ));
        }
        self.allocation
            .validate()
            .and_then(|_| self.mechanism.validate())
            .map_err(|e| Error::Config(format!("{e}")))
    }

    /// Checkpoints with the horizon appended if missing.
    pub fn snapshot_steps(&self) -> Vec<u64> {
        let mut steps = self.checkpoints.clone();
        if steps.last() != Some(&self.horizon) {
            steps.push(self.horizon);
        }
        steps
    }

    fn effective_mechanism(&self) -> MechanismParams {
        let mut m = self.mechanism;
        m.mle.default_prior = self.varsigma;
        m
    }
}

/// Counts and urn proportions after `step` outcomes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Snapshot {
    pub step: u64,
    pub counts: CountsTensor,
    /// `P[j][h]`
    pub p: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialTrace {
    pub config: TrialConfig,
    pub horizon: u64,
    /// Success probabilities used for this trial.
    pub theta: Vec<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
}

impl TrialTrace {
    pub fn snapshot_at(&self, step: u64) -> Option<&Snapshot> {
        self.snapshots
            .binary_search_by_key(&step, |s| s.step)
            .ok()
            .map(|i| &self.snapshots[i])
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("a trace always holds the horizon snapshot")
    }
}

fn snapshot(engine: &mut UrnEngine, state: &TrialState) -> Result<Snapshot> {
    let counts = &state.counts;
    let mut p = vec![vec![0.0; counts.num_strata()]; counts.num_treatments()];
    for (j, row) in p.iter_mut().enumerate() {
        for (h, cell) in row.iter_mut().enumerate() {
            *cell = engine.cell(counts, state.step, j, h)?.0;
        }
    }
    Ok(Snapshot {
        step: state.step,
        counts: counts.clone(),
        p,
    })
}

/// Simulates one trial of `config.horizon` patients.
///
/// For each patient: draw the stratum, compute the urn proportions of every
/// treatment in that stratum from the current counts, randomize, draw the
/// response and record it. Random-parameter scenarios are realized first,
/// from the same generator.
pub fn run_trial<R: Rng + ?Sized>(
    config: &TrialConfig,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<TrialTrace> {
    config.validate()?;
    if scenario.num_treatments() != config.num_treatments
        || scenario.num_strata() != config.num_strata
    {
        return Err(Error::Config(format!(
            "scenario {} is {} x {} but the trial is {} x {}",
            scenario.name,
            scenario.num_treatments(),
            scenario.num_strata(),
            config.num_treatments,
            config.num_strata
        )));
    }
    let theta = scenario.realize(rng)?;
    let treatments = config.num_treatments;
    let mut engine = UrnEngine::new(config.effective_mechanism(), treatments);
    let mut state = TrialState::new(treatments, config.num_strata);
    let steps = config.snapshot_steps();
    let mut next = steps.iter().copied().peekable();
    let mut snapshots = Vec::with_capacity(steps.len());
    let randomized = config.allocation.is_constant();
    let mut p_row = vec![0.0; treatments];
    let mut probs = Vec::with_capacity(treatments);

    loop {
        while next.peek() == Some(&state.step) {
            snapshots.push(snapshot(&mut engine, &state)?);
            next.next();
        }
        if state.step == config.horizon {
            break;
        }
        let h = draw_covariate(&config.covariate_probs, rng);
        let j = if randomized {
            rng.random_range(0..treatments)
        } else {
            for (k, p) in p_row.iter_mut().enumerate() {
                *p = engine.cell(&state.counts, state.step, k, h)?.0;
            }
            allocation_probs_into(&p_row, &config.allocation, &mut probs)?;
            draw_assignment(&probs, rng)
        };
        let success = draw_outcome(theta[j][h], rng);
        state.record_outcome(h, j, success)?;
    }

    Ok(TrialTrace {
        config: config.clone(),
        horizon: config.horizon,
        theta,
        snapshots,
    })
}
