//! Randomization: covariate, treatment and outcome draws.

use alloc::vec::Vec;

use libm::pow;
use rand::Rng;

use crate::error::{Error, Result};

/// Default cap on `1 / (1 - x)`, reached when an urn is all white.
pub const INVERSE_COMPLEMENT_CAP: f64 = 1e6;

/// The increasing allocation function `f`, with `f(0) > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AllocationRule {
    /// `min(1 / (1 - x), cap)`
    InverseComplement { cap: f64 },
    /// `x^γ + ε`
    Power { gamma: f64, epsilon: f64 },
    /// `f ≡ 1`: complete randomization.
    Constant,
}

impl Default for AllocationRule {
    fn default() -> Self {
        AllocationRule::InverseComplement {
            cap: INVERSE_COMPLEMENT_CAP,
        }
    }
}

impl AllocationRule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AllocationRule::InverseComplement { cap } => cap >= 1.0 && cap.is_finite(),
            AllocationRule::Power { gamma, epsilon } => gamma > 0.0 && epsilon > 0.0,
            AllocationRule::Constant => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(
                "allocation function must be positive and increasing".into(),
            ))
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, AllocationRule::Constant)
    }

    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match *self {
            AllocationRule::InverseComplement { cap } => {
                let d = 1.0 - x;
                if d * cap <= 1.0 {
                    cap
                } else {
                    1.0 / d
                }
            }
            AllocationRule::Power { gamma, epsilon } => pow(x, gamma) + epsilon,
            AllocationRule::Constant => 1.0,
        }
    }
}

/// `f(x)` for `x ∈ [0, 1]`.
pub fn f_eval(rule: &AllocationRule, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Argument(
            "allocation function needs x in [0, 1]".into(),
        ));
    }
    Ok(rule.apply(x))
}

/// `f(P_j) / Σ_l f(P_l)`.
pub fn allocation_probs(p_row: &[f64], rule: &AllocationRule) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(p_row.len());
    allocation_probs_into(p_row, rule, &mut out)?;
    Ok(out)
}

pub(crate) fn allocation_probs_into(
    p_row: &[f64],
    rule: &AllocationRule,
    out: &mut Vec<f64>,
) -> Result<()> {
    out.clear();
    let mut total = 0.0;
    for &p in p_row {
        let v = f_eval(rule, p)?;
        total += v;
        out.push(v);
    }
    for v in out.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// Index drawn with probability proportional to `weights` (which must sum to ~1).
fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Stratum of the next patient.
pub fn draw_covariate<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    categorical(p, rng)
}

/// Treatment for the next patient given allocation probabilities.
pub fn draw_assignment<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    categorical(probs, rng)
}

/// Bernoulli(θ) response.
pub fn draw_outcome<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < theta
}

/// Checks that `p` is a probability vector with strictly positive entries.
pub fn validate_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Argument(alloc::format!(
            "{what}: entries must be strictly positive"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Argument(alloc::format!(
            "{what}: entries must sum to 1 (got {total})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f_examples() {
        let f = AllocationRule::default();
        assert_eq!(f_eval(&f, 0.5).unwrap(), 2.0);
        assert_eq!(f_eval(&f, 0.0).unwrap(), 1.0);
        assert_eq!(f_eval(&f, 1.0).unwrap(), 1e6);
        assert!(f_eval(&f, 1.2).is_err());
        assert!(f_eval(&f, -0.1).is_err());
        assert_eq!(f_eval(&AllocationRule::Constant, 0.3).unwrap(), 1.0);
        let pw = AllocationRule::Power {
            gamma: 2.0,
            epsilon: 0.01,
        };
        assert_relative_eq!(f_eval(&pw, 0.5).unwrap(), 0.26, epsilon = 1e-15);
    }

    #[test]
    fn probs_examples() {
        let f = AllocationRule::default();
        let p = allocation_probs(&[0.5, 0.1], &f).unwrap();
        assert_relative_eq!(p[0], 9.0 / 14.0, epsilon = 1e-15);
        assert_relative_eq!(p[1], 5.0 / 14.0, epsilon = 1e-15);
        let p = allocation_probs(&[0.3, 0.3, 0.3], &f).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = allocation_probs(&[0.9, 0.1], &AllocationRule::Constant).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    fn frequencies(p: &[f64], draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = vec![0usize; p.len()];
        for _ in 0..draws {
            hits[draw_covariate(p, &mut rng)] += 1;
        }
        hits.iter().map(|&c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn covariate_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(draw_covariate(&[1.0, 0.0, 0.0, 0.0, 0.0], &mut rng), 0);
        }
        for (p, seed) in [(vec![0.2; 5], 11), (vec![0.3, 0.3, 0.05, 0.05, 0.3], 12)] {
            let freq = frequencies(&p, 100_000, seed);
            for (f, q) in freq.iter().zip(&p) {
                assert!((f - q).abs() < 0.01, "{f} vs {q}");
            }
        }
    }

    #[test]
    fn assignment_and_outcome_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            assert_eq!(draw_assignment(&[1.0, 0.0], &mut rng), 0);
            assert!(draw_outcome(1.0, &mut rng));
            assert!(!draw_outcome(0.0, &mut rng));
        }
        let hits = (0..100_000).filter(|_| draw_outcome(0.3, &mut rng)).count();
        assert!((hits as f64 / 1e5 - 0.3).abs() < 0.01);
    }

    #[test]
    fn draws_are_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        let p = [0.1, 0.6, 0.3];
        for _ in 0..500 {
            assert_eq!(draw_covariate(&p, &mut a), draw_covariate(&p, &mut b));
        }
    }

    #[test]
    fn simplex_validation() {
        assert!(validate_simplex(&[0.5, 0.5], "p").is_ok());
        assert!(validate_simplex(&[0.5, 0.6], "p").is_err());
        assert!(validate_simplex(&[1.0, 0.0], "p").is_err());
        assert!(validate_simplex(&[], "p").is_err());
    }
}
