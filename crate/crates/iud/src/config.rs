//! Run configuration documents.
//!
//! A document is JSON with optional sections `trial`, `mechanism`,
//! `allocation`, `scenarios` and `replicates`. Missing values take the
//! defaults of the simulation study: two treatments, five equiprobable
//! strata, `ς = 1`, `f(x) = 1/(1-x)`, `ψ_max = 10`, `c_n = 1/ln n` and 10⁴
//! replicates. Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use iud_core::urn::MechanismVariant;
use iud_core::{
    AllocationRule, CRule, MechanismParams, MleOptions, PsiKind, Scenario, ScenarioKind,
    TrialConfig,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_CHECKPOINTS: [u64; 3] = [50, 100, 200];
pub const DEFAULT_REPLICATES: u64 = 10_000;

/// A configuration problem, located by its key path (e.g. `trial.p`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<TrialDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MechanismDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationDoc>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialDoc {
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub treatments: Option<usize>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varsigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<MechanismVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_kind: Option<PsiKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_rule: Option<CRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mle: Option<MleDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refit_every: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationKind {
    InverseComplement,
    Power,
    Constant,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<AllocationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

/// A catalog name or an inline scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Name(String),
    Inline(InlineScenario),
}

/// Exactly one of `theta` (a `J × H` matrix) or `beta` (one `[α, β]` pair
/// per treatment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineScenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<(f64, f64)>>,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Its `checkpoints` include the steps needed by `info_times`.
    pub trial: TrialConfig,
    /// Steps at which metrics are reported.
    pub metric_checkpoints: Vec<u64>,
    pub info_times: Vec<f64>,
    pub scenarios: Vec<Scenario>,
    pub replicates: u64,
}

/// Parses a configuration document. A run manifest is accepted too; its
/// embedded `config` is used.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_doc(text)?.resolve()
}

pub fn parse_doc(text: &str) -> Result<ConfigDoc, ConfigError> {
    let mut value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ConfigError::new("", format!("invalid JSON: {e}")))?;
    if let Some(obj) = value.as_object_mut() {
        if obj.contains_key("manifest_version") {
            value = obj
                .remove("config")
                .ok_or_else(|| ConfigError::new("config", "manifest has no config"))?;
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(path, e.into_inner())
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn check(ok: bool, path: &str, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(path, message))
    }
}

impl ConfigDoc {
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let t = self.trial.clone().unwrap_or_default();
        let treatments = t.treatments.unwrap_or(2);
        check(
            treatments >= 2,
            "trial.J",
            "at least two treatments are required",
        )?;
        let strata = t.strata.unwrap_or(5);
        check(strata >= 1, "trial.H", "at least one stratum is required")?;
        let horizon = t.n.unwrap_or(200);
        check(horizon >= 1, "trial.n", "must be positive")?;

        let p =
            t.p.clone()
                .unwrap_or_else(|| vec![1.0 / strata as f64; strata]);
        check(p.len() == strata, "trial.p", "needs one entry per stratum")?;
        iud_core::allocation::validate_simplex(&p, "covariate probabilities")
            .map_err(|e| ConfigError::new("trial.p", e))?;

        let varsigma = t.varsigma.unwrap_or(1.0);
        check(
            varsigma > 0.0 && varsigma.is_finite(),
            "trial.varsigma",
            "must be positive",
        )?;

        let metric_checkpoints = match &t.checkpoints {
            Some(c) => {
                check(!c.is_empty(), "trial.checkpoints", "must not be empty")?;
                check(
                    c.windows(2).all(|w| w[0] < w[1]),
                    "trial.checkpoints",
                    "must be strictly ascending",
                )?;
                check(
                    c[0] >= 1 && c[c.len() - 1] <= horizon,
                    "trial.checkpoints",
                    "must lie between 1 and n",
                )?;
                c.clone()
            }
            None => {
                let mut c: Vec<u64> = DEFAULT_CHECKPOINTS
                    .iter()
                    .copied()
                    .filter(|&c| c <= horizon)
                    .collect();
                if c.is_empty() {
                    c.push(horizon);
                }
                c
            }
        };

        let info_times = t.info_times.clone().unwrap_or_default();
        check(
            info_times.iter().all(|&t| t > 0.0 && t <= 1.0)
                && info_times.windows(2).all(|w| w[0] < w[1]),
            "trial.info_times",
            "must be strictly ascending in (0, 1]",
        )?;
        let mut snapshot_steps = metric_checkpoints.clone();
        for &time in &info_times {
            let step = iud_core::inference::information_step(horizon, time);
            check(step >= 1, "trial.info_times", "n t must be at least 1")?;
            snapshot_steps.push(step);
        }
        snapshot_steps.sort_unstable();
        snapshot_steps.dedup();

        let mechanism = self.mechanism_params()?;
        let allocation = self.allocation_rule()?;

        let trial = TrialConfig {
            num_treatments: treatments,
            num_strata: strata,
            horizon,
            covariate_probs: p.clone(),
            varsigma,
            allocation,
            mechanism,
            seed: t.seed.unwrap_or(0),
            checkpoints: snapshot_steps,
        };
        trial.validate().map_err(|e| ConfigError::new("trial", e))?;

        check(
            !self.scenarios.is_empty(),
            "scenarios",
            "at least one scenario is required",
        )?;
        let scenarios = self
            .scenarios
            .iter()
            .enumerate()
            .map(|(i, spec)| resolve_scenario(spec, i, &p, treatments))
            .collect::<Result<Vec<_>, _>>()?;

        let replicates = self.replicates.unwrap_or(DEFAULT_REPLICATES);
        check(replicates >= 1, "replicates", "must be at least 1")?;

        Ok(RunConfig {
            trial,
            metric_checkpoints,
            info_times,
            scenarios,
            replicates,
        })
    }

    fn mechanism_params(&self) -> Result<MechanismParams, ConfigError> {
        let m = self.mechanism.clone().unwrap_or_default();
        let d = MechanismParams::default();
        let psi_max = m.psi_max.unwrap_or(d.psi_max);
        check(
            psi_max > 0.0 && psi_max.is_finite(),
            "mechanism.psi_max",
            "must be positive",
        )?;
        let c_rule = m.c_rule.unwrap_or(d.c_rule);
        c_rule
            .validate()
            .map_err(|e| ConfigError::new("mechanism.c_rule", e))?;
        let refit_every = m.refit_every.unwrap_or(d.refit_every);
        check(
            refit_every >= 1,
            "mechanism.refit_every",
            "must be at least 1",
        )?;
        let mle_doc = m.mle.unwrap_or_default();
        let dm = MleOptions::default();
        let mle = MleOptions {
            m_max: mle_doc.m_max.unwrap_or(dm.m_max),
            tol: mle_doc.tol.unwrap_or(dm.tol),
            max_iters: mle_doc.max_iters.unwrap_or(dm.max_iters),
            default_prior: dm.default_prior,
        };
        check(
            mle.m_max > 1.0 && mle.m_max.is_finite(),
            "mechanism.mle.m_max",
            "must exceed 1",
        )?;
        check(mle.tol > 0.0, "mechanism.mle.tol", "must be positive")?;
        check(
            mle.max_iters >= 1,
            "mechanism.mle.max_iters",
            "must be positive",
        )?;
        Ok(MechanismParams {
            variant: m.variant.unwrap_or(d.variant),
            psi_kind: m.psi_kind.unwrap_or(d.psi_kind),
            psi_max,
            c_rule,
            mle,
            refit_every,
        })
    }

    fn allocation_rule(&self) -> Result<AllocationRule, ConfigError> {
        let a = self.allocation.clone().unwrap_or_default();
        let kind = a.f.unwrap_or(AllocationKind::InverseComplement);
        let unused = |field: &str, given: bool| {
            check(
                !given,
                &format!("allocation.{field}"),
                "not used by this allocation function",
            )
        };
        let rule = match kind {
            AllocationKind::InverseComplement => {
                unused("gamma", a.gamma.is_some())?;
                unused("epsilon", a.epsilon.is_some())?;
                AllocationRule::InverseComplement {
                    cap: a
                        .cap
                        .unwrap_or(iud_core::allocation::INVERSE_COMPLEMENT_CAP),
                }
            }
            AllocationKind::Power => {
                unused("cap", a.cap.is_some())?;
                AllocationRule::Power {
                    gamma: a.gamma.unwrap_or(1.0),
                    epsilon: a.epsilon.unwrap_or(1e-3),
                }
            }
            AllocationKind::Constant => {
                unused("cap", a.cap.is_some())?;
                unused("gamma", a.gamma.is_some())?;
                unused("epsilon", a.epsilon.is_some())?;
                AllocationRule::Constant
            }
        };
        rule.validate()
            .map_err(|e| ConfigError::new("allocation", e))?;
        Ok(rule)
    }
}

fn resolve_scenario(
    spec: &ScenarioSpec,
    i: usize,
    p: &[f64],
    treatments: usize,
) -> Result<Scenario, ConfigError> {
    let at = format!("scenarios[{i}]");
    let scenario = match spec {
        ScenarioSpec::Name(name) => Scenario::builtin(name)
            .ok_or_else(|| ConfigError::new(&at, format!("unknown scenario {name:?}")))?
            .with_covariate_probs(p.to_vec())
            .map_err(|e| ConfigError::new(&at, e))?,
        ScenarioSpec::Inline(inline) => match (&inline.theta, &inline.beta) {
            (Some(theta), None) => Scenario::deterministic(&inline.name, theta.clone(), p.to_vec())
                .map_err(|e| ConfigError::new(format!("{at}.theta"), e))?,
            (None, Some(beta)) => Scenario::random_beta(&inline.name, beta.clone(), p.to_vec())
                .map_err(|e| ConfigError::new(format!("{at}.beta"), e))?,
            _ => return Err(ConfigError::new(&at, "give exactly one of theta or beta")),
        },
    };
    check(
        scenario.num_treatments() == treatments,
        &at,
        &format!(
            "has {} treatments but trial.J is {treatments}",
            scenario.num_treatments()
        ),
    )?;
    Ok(scenario)
}

impl RunConfig {
    /// The fully explicit document for this configuration.
    pub fn to_doc(&self) -> ConfigDoc {
        let t = &self.trial;
        let m = &t.mechanism;
        let (f, cap, gamma, epsilon) = match t.allocation {
            AllocationRule::InverseComplement { cap } => {
                (AllocationKind::InverseComplement, Some(cap), None, None)
            }
            AllocationRule::Power { gamma, epsilon } => {
                (AllocationKind::Power, None, Some(gamma), Some(epsilon))
            }
            AllocationRule::Constant => (AllocationKind::Constant, None, None, None),
        };
        ConfigDoc {
            trial: Some(TrialDoc {
                treatments: Some(t.num_treatments),
                strata: Some(t.num_strata),
                n: Some(t.horizon),
                p: Some(t.covariate_probs.clone()),
                varsigma: Some(t.varsigma),
                seed: Some(t.seed),
                checkpoints: Some(self.metric_checkpoints.clone()),
                info_times: (!self.info_times.is_empty()).then(|| self.info_times.clone()),
            }),
            mechanism: Some(MechanismDoc {
                variant: Some(m.variant),
                psi_kind: Some(m.psi_kind),
                psi_max: Some(m.psi_max),
                c_rule: Some(m.c_rule),
                mle: Some(MleDoc {
                    m_max: Some(m.mle.m_max),
                    tol: Some(m.mle.tol),
                    max_iters: Some(m.mle.max_iters),
                }),
                refit_every: Some(m.refit_every),
            }),
            allocation: Some(AllocationDoc {
                f: Some(f),
                cap,
                gamma,
                epsilon,
            }),
            scenarios: self
                .scenarios
                .iter()
                .map(|s| {
                    if Scenario::builtin(&s.name).is_some_and(|b| b.kind == s.kind) {
                        return ScenarioSpec::Name(s.name.clone());
                    }
                    let (theta, beta) = match &s.kind {
                        ScenarioKind::Deterministic { theta } => (Some(theta.clone()), None),
                        ScenarioKind::RandomBeta { params } => (None, Some(params.clone())),
                    };
                    ScenarioSpec::Inline(InlineScenario {
                        name: s.name.clone(),
                        theta,
                        beta,
                    })
                })
                .collect(),
            replicates: Some(self.replicates),
        }
    }
}
