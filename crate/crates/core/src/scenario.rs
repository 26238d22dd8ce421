//! Truth models for simulation: fixed success probabilities or Beta draws.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::allocation::validate_simplex;
use crate::error::{Error, Result};

/// Covariate distribution with two under-represented strata.
pub const UNBALANCED_P: [f64; 5] = [0.3, 0.3, 0.05, 0.05, 0.3];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScenarioKind {
    /// `θ[j][h]`.
    Deterministic { theta: Vec<Vec<f64>> },
    /// `θ[j][h] ~ Beta(α_j, β_j)` iid over strata, drawn once per trial.
    RandomBeta { params: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub covariate_probs: Vec<f64>,
}

impl Scenario {
    pub fn deterministic(
        name: &str,
        theta: Vec<Vec<f64>>,
        covariate_probs: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            name: name.to_string(),
            kind: ScenarioKind::Deterministic { theta },
            covariate_probs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn random_beta(
        name: &str,
        params: Vec<(f64, f64)>,
        covariate_probs: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            name: name.to_string(),
            kind: ScenarioKind::RandomBeta { params },
            covariate_probs,
        };
        s.validate()?;
        Ok(s)
    }

    /// Catalog entry by name, with uniform `p` over its strata.
    pub fn builtin(name: &str) -> Option<Self> {
        let det = |t1: [f64; 5], t2: [f64; 5]| ScenarioKind::Deterministic {
            theta: vec![t1.to_vec(), t2.to_vec()],
        };
        let kind = match name {
            "S_Bbar" => det([0.9, 0.4, 0.6, 0.8, 0.2], [0.45, 0.85, 0.75, 0.6, 0.95]),
            "S_B" => det([0.5; 5], [0.1; 5]),
            "S_1" => det([0.5, 0.5, 0.5, 0.3, 0.3], [0.3, 0.3, 0.3, 0.1, 0.1]),
            "S_2" => det([0.3; 5], [0.1, 0.1, 0.1, 0.5, 0.5]),
            "S_3" => det(
                [0.56, 0.5, 0.55, 0.44, 0.45],
                [0.45, 0.55, 0.50, 0.42, 0.58],
            ),
            "S_4" => ScenarioKind::RandomBeta {
                params: vec![(49.5, 49.5), (3.5, 31.5)],
            },
            "S_5" => ScenarioKind::RandomBeta {
                params: vec![(49.5, 49.5), (49.5, 49.5)],
            },
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            kind,
            covariate_probs: vec![0.2; 5],
        })
    }

    pub fn with_covariate_probs(mut self, p: Vec<f64>) -> Result<Self> {
        self.covariate_probs = p;
        self.validate()?;
        Ok(self)
    }

    pub fn num_treatments(&self) -> usize {
        match &self.kind {
            ScenarioKind::Deterministic { theta } => theta.len(),
            ScenarioKind::RandomBeta { params } => params.len(),
        }
    }

    pub fn num_strata(&self) -> usize {
        self.covariate_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_simplex(&self.covariate_probs, "covariate probabilities")?;
        let strata = self.num_strata();
        match &self.kind {
            ScenarioKind::Deterministic { theta } => {
                if theta.is_empty() {
                    return Err(Error::Argument(format!(
                        "scenario {}: theta is empty",
                        self.name
                    )));
                }
                for row in theta {
                    if row.len() != strata {
                        return Err(Error::Argument(format!(
                            "scenario {}: theta rows must have one entry per stratum ({strata})",
                            self.name
                        )));
                    }
                    if let Some(v) = row.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                        return Err(Error::Argument(format!(
                            "scenario {}: theta entry {v} is outside (0, 1)",
                            self.name
                        )));
                    }
                }
            }
            ScenarioKind::RandomBeta { params } => {
                if params.is_empty() {
                    return Err(Error::Argument(format!(
                        "scenario {}: no Beta parameters",
                        self.name
                    )));
                }
                if params
                    .iter()
                    .any(|&(a, b)| !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()))
                {
                    return Err(Error::Argument(format!(
                        "scenario {}: Beta parameters must be positive",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// The `J × H` success probabilities for one trial.
    ///
    /// Deterministic scenarios do not touch `rng`.
    pub fn realize<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        match &self.kind {
            ScenarioKind::Deterministic { theta } => Ok(theta.clone()),
            ScenarioKind::RandomBeta { params } => {
                let strata = self.num_strata();
                params
                    .iter()
                    .map(|&(a, b)| {
                        let dist = Beta::new(a, b)
                            .map_err(|e| Error::Argument(format!("Beta({a}, {b}): {e}")))?;
                        // Small shape parameters can round a draw to exactly 0 or 1.
                        Ok((0..strata)
                            .map(|_| {
                                dist.sample(rng)
                                    .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
                            })
                            .collect())
                    })
                    .collect()
            }
        }
    }
}

/// Names of the catalog scenarios.
pub const BUILTIN_NAMES: [&str; 7] = ["S_Bbar", "S_B", "S_1", "S_2", "S_3", "S_4", "S_5"];

/// Every catalog scenario, in table order.
pub fn builtin_scenarios() -> Vec<Scenario> {
    BUILTIN_NAMES
        .iter()
        .map(|n| Scenario::builtin(n).expect("catalog names resolve"))
        .collect()
}
