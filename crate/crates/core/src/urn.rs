//! Urn update mechanisms and the resulting urn proportions.
//!
//! The composition of the type-`j` urn in stratum `h` after `n` outcomes is
//! `W = φ_S + S[j][h]` white and `R = φ_F + F[j][h]` red balls, where the
//! borrowing terms `(φ_S, φ_F)` summarize what the other strata say about
//! treatment `j`. The urn proportion is
//!
//! ```text
//! P = (φ_S + S) / (φ_S + φ_F + N) = ρ θ̂ + (1 - ρ) φ_S / (φ_S + φ_F),   ρ = N / (φ_S + φ_F + N)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use libm::{log, pow};

use crate::counts::{ratio, CountsTensor};
use crate::error::{Error, Result};
use crate::mle::{
    cluster_strata, fit_mle_warm, AggregatedSample, MleOptions, MleResult, MleStatus, Partition,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MechanismVariant {
    /// Outside-stratum information with a bounded weight `ψ(N_outside)`.
    #[cfg_attr(feature = "serde", serde(alias = "IUD1"))]
    VanishingBorrowing,
    /// Pool the strata whose estimates lie within `c_n`.
    #[cfg_attr(feature = "serde", serde(alias = "IUD2"))]
    TreatmentSimilarity,
    /// Beta-binomial MLE of a common Beta prior.
    #[cfg_attr(feature = "serde", serde(alias = "IUD3"))]
    ModelBased,
    /// Model-based, with strata first clustered by estimate.
    #[cfg_attr(feature = "serde", serde(alias = "IUD3C"))]
    ModelBasedClustered,
    /// `φ ≡ 0`: the urn proportion is the raw estimate.
    #[cfg_attr(feature = "serde", serde(alias = "NB"))]
    NoBorrowing,
}

impl MechanismVariant {
    pub fn label(self) -> &'static str {
        match self {
            MechanismVariant::VanishingBorrowing => "IUD1",
            MechanismVariant::TreatmentSimilarity => "IUD2",
            MechanismVariant::ModelBased => "IUD3",
            MechanismVariant::ModelBasedClustered => "IUD3C",
            MechanismVariant::NoBorrowing => "NB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PsiKind {
    /// `min(x, ψ_max)`
    Min,
    /// `ψ_max (1 - exp(-x / ψ_max))`
    Exp,
    /// `x ψ_max / (x + ψ_max)`
    Rational,
}

/// Similarity threshold sequence `c_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CRule {
    /// `c_1 = ∞`, `c_n = 1 / ln n` for `n ≥ 2`.
    InverseLog,
    /// `c_n = c` for every `n`.
    Constant(f64),
    /// `c_n = scale · n^(-exponent)`.
    Power { scale: f64, exponent: f64 },
}

impl CRule {
    /// `c_n`; step 0 uses `c_1`.
    pub fn at(&self, n: u64) -> f64 {
        let n = n.max(1);
        match *self {
            CRule::InverseLog => {
                if n == 1 {
                    f64::INFINITY
                } else {
                    1.0 / log(n as f64)
                }
            }
            CRule::Constant(c) => c,
            CRule::Power { scale, exponent } => scale * pow(n as f64, -exponent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CRule::InverseLog => true,
            CRule::Constant(c) => c > 0.0,
            CRule::Power { scale, exponent } => scale > 0.0 && scale.is_finite() && exponent >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(
                "c_n must be positive and non-increasing".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MechanismParams {
    pub variant: MechanismVariant,
    pub psi_kind: PsiKind,
    pub psi_max: f64,
    pub c_rule: CRule,
    pub mle: MleOptions,
    /// Refit the model-based prior only every `refit_every` outcomes of a treatment.
    pub refit_every: u64,
}

impl Default for MechanismParams {
    fn default() -> Self {
        Self {
            variant: MechanismVariant::VanishingBorrowing,
            psi_kind: PsiKind::Rational,
            psi_max: 10.0,
            c_rule: CRule::InverseLog,
            mle: MleOptions::default(),
            refit_every: 1,
        }
    }
}

impl MechanismParams {
    pub fn with_variant(variant: MechanismVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.psi_max > 0.0) || !self.psi_max.is_finite() {
            return Err(Error::Argument("psi_max must be positive".into()));
        }
        if self.refit_every == 0 {
            return Err(Error::Argument("refit_every must be at least 1".into()));
        }
        self.c_rule.validate()?;
        self.mle.validate()
    }
}

/// Borrowing terms for one urn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BorrowTerms {
    /// Finite, non-negative `(φ_S, φ_F)`.
    Finite { phi_s: f64, phi_f: f64 },
    /// Infinite prior mass concentrated at `mean`; the urn proportion is
    /// `mean` and the own-stratum weight is 0.
    Saturated { mean: f64 },
}

impl BorrowTerms {
    pub const ZERO: BorrowTerms = BorrowTerms::Finite {
        phi_s: 0.0,
        phi_f: 0.0,
    };

    fn from_fit(fit: &MleResult) -> Self {
        match fit.status {
            MleStatus::PooledBoundary => BorrowTerms::Saturated { mean: fit.mean },
            _ => BorrowTerms::Finite {
                phi_s: fit.alpha,
                phi_f: fit.beta,
            },
        }
    }
}

/// Bounded outside-stratum weight.
pub fn psi_eval(kind: PsiKind, x: f64, psi_max: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Argument("psi needs a non-negative argument".into()));
    }
    if !(psi_max > 0.0) {
        return Err(Error::Argument("psi_max must be positive".into()));
    }
    Ok(psi(kind, x, psi_max))
}

#[inline]
fn psi(kind: PsiKind, x: f64, psi_max: f64) -> f64 {
    match kind {
        PsiKind::Min => x.min(psi_max),
        PsiKind::Exp => psi_max * -libm::expm1(-x / psi_max),
        PsiKind::Rational => {
            if x.is_infinite() {
                psi_max
            } else {
                x * psi_max / (x + psi_max)
            }
        }
    }
}

/// `φ_S = θ̂_out ψ(N_out)`, `φ_F = (1 - θ̂_out) ψ(N_out)`.
pub fn borrow_vanishing(
    counts: &CountsTensor,
    j: usize,
    h: usize,
    params: &MechanismParams,
) -> Result<BorrowTerms> {
    counts.check(j, h)?;
    Ok(vanishing(counts, j, h, params.psi_kind, params.psi_max))
}

fn vanishing(
    counts: &CountsTensor,
    j: usize,
    h: usize,
    kind: PsiKind,
    psi_max: f64,
) -> BorrowTerms {
    let (s, n) = counts.outside(j, h);
    let weight = psi(kind, n as f64, psi_max);
    let rate = ratio(s, n);
    BorrowTerms::Finite {
        phi_s: rate * weight,
        phi_f: (1.0 - rate) * weight,
    }
}

/// Strata `k ≠ h` with `|θ̂_{j,k} - θ̂_{j,h}| ≤ c_n`.
pub fn similarity_set(counts: &CountsTensor, j: usize, h: usize, c_n: f64) -> Result<Vec<usize>> {
    counts.check(j, h)?;
    let own = counts.rate(j, h);
    Ok((0..counts.num_strata())
        .filter(|&k| k != h && (counts.rate(j, k) - own).abs() <= c_n)
        .collect())
}

/// Sums of successes and failures over the similarity set.
pub fn borrow_similarity(
    counts: &CountsTensor,
    j: usize,
    h: usize,
    c_n: f64,
) -> Result<BorrowTerms> {
    counts.check(j, h)?;
    Ok(similarity(counts, j, h, c_n))
}

fn similarity(counts: &CountsTensor, j: usize, h: usize, c_n: f64) -> BorrowTerms {
    let own = counts.rate(j, h);
    let (mut s, mut f) = (0u64, 0u64);
    for k in 0..counts.num_strata() {
        if k != h && (counts.rate(j, k) - own).abs() <= c_n {
            s += counts.successes(j, k);
            f += counts.failures(j, k);
        }
    }
    BorrowTerms::Finite {
        phi_s: s as f64,
        phi_f: f as f64,
    }
}

fn treatment_sample(counts: &CountsTensor, j: usize) -> AggregatedSample {
    let s = counts.successes_row(j);
    let f = counts.failures_row(j);
    AggregatedSample::new(s.iter().zip(f).map(|(a, b)| a + b).collect(), s.to_vec())
        .expect("counts are consistent")
}

/// `(φ_S, φ_F) = (α̂, β̂)` fitted on treatment `j`'s per-stratum counts.
///
/// Identical for every stratum. A pooled-boundary fit yields
/// [`BorrowTerms::Saturated`] at the pooled success rate.
pub fn borrow_model_based(
    counts: &CountsTensor,
    j: usize,
    opts: &MleOptions,
) -> Result<BorrowTerms> {
    Ok(BorrowTerms::from_fit(&model_fit(counts, j, opts, None)?))
}

fn model_fit(
    counts: &CountsTensor,
    j: usize,
    opts: &MleOptions,
    hint: Option<&MleResult>,
) -> Result<MleResult> {
    crate::error::check_index("treatment", j, counts.num_treatments())?;
    let sample = treatment_sample(counts, j);
    match fit_mle_warm(&sample, opts, hint) {
        Ok(fit) => Ok(fit),
        Err(Error::NoConvergence { .. }) => {
            let (s, n) = (sample.total_successes(), sample.total_trials());
            Ok(MleResult {
                alpha: f64::INFINITY,
                beta: f64::INFINITY,
                mean: s as f64 / n as f64,
                status: MleStatus::PooledBoundary,
                log_likelihood: f64::NAN,
            })
        }
        Err(e) => Err(e),
    }
}

fn treatment_partition(counts: &CountsTensor, j: usize, c_n: f64) -> Partition {
    let rates: Vec<f64> = (0..counts.num_strata())
        .map(|h| counts.rate(j, h))
        .collect();
    cluster_strata(&rates, c_n)
}

/// Model-based prior fitted on the block sums of `partition`.
fn clustered_fit(
    counts: &CountsTensor,
    j: usize,
    partition: &Partition,
    opts: &MleOptions,
    hint: Option<&MleResult>,
) -> Result<MleResult> {
    let sample = treatment_sample(counts, j).aggregate(partition)?;
    let fit = match fit_mle_warm(&sample, opts, hint) {
        Ok(fit) => fit,
        Err(Error::NoConvergence { .. }) => MleResult {
            alpha: f64::INFINITY,
            beta: f64::INFINITY,
            mean: sample.total_successes() as f64 / sample.total_trials() as f64,
            status: MleStatus::PooledBoundary,
            log_likelihood: f64::NAN,
        },
        Err(e) => return Err(e),
    };
    Ok(fit)
}

/// `(P, ρ)` for cell `(j, h)` given its borrowing terms.
pub fn urn_proportion(
    counts: &CountsTensor,
    terms: BorrowTerms,
    j: usize,
    h: usize,
) -> Result<(f64, f64)> {
    counts.check(j, h)?;
    proportion_from(counts.successes(j, h), counts.assignments(j, h), terms)
}

/// `(P, ρ)` from own-stratum `(S, N)` and borrowing terms.
///
/// An urn with no balls at all (`φ_S + φ_F + N = 0`) has `P = 1/2`, `ρ = 0`.
pub fn proportion_from(s: u64, n: u64, terms: BorrowTerms) -> Result<(f64, f64)> {
    match terms {
        BorrowTerms::Saturated { mean } => Ok((mean, 0.0)),
        BorrowTerms::Finite { phi_s, phi_f } => {
            if !(phi_s >= 0.0 && phi_f >= 0.0) || !phi_s.is_finite() || !phi_f.is_finite() {
                return Err(Error::Argument(
                    "borrowing terms must be finite and non-negative".into(),
                ));
            }
            let mass = phi_s + phi_f + n as f64;
            if mass == 0.0 {
                return Ok((0.5, 0.0));
            }
            let p = ((phi_s + s as f64) / mass).clamp(0.0, 1.0);
            Ok((p, n as f64 / mass))
        }
    }
}

/// Urn proportion and own-data weight of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UrnCell {
    pub p: f64,
    pub rho: f64,
}

/// `(P, ρ)` for every cell after `step` outcomes, as a `J × H` matrix.
pub fn urn_proportions_all(
    counts: &CountsTensor,
    params: &MechanismParams,
    step: u64,
) -> Result<Vec<Vec<UrnCell>>> {
    let mut engine = UrnEngine::new(*params, counts.num_treatments());
    let mut out = vec![Vec::with_capacity(counts.num_strata()); counts.num_treatments()];
    for (j, row) in out.iter_mut().enumerate() {
        for h in 0..counts.num_strata() {
            let (p, rho) = engine.cell(counts, step, j, h)?;
            row.push(UrnCell { p, rho });
        }
    }
    Ok(out)
}

/// Per-trial mechanism state: caches the model-based fit of each treatment
/// so it is recomputed only when that treatment's counts change.
#[derive(Debug, Clone)]
pub struct UrnEngine {
    params: MechanismParams,
    fits: Vec<Option<CachedFit>>,
}

#[derive(Debug, Clone)]
struct CachedFit {
    /// `N_{j,.}` at fit time.
    assignments: u64,
    /// Clustered variant only.
    partition: Option<Partition>,
    fit: MleResult,
}

impl UrnEngine {
    pub fn new(params: MechanismParams, treatments: usize) -> Self {
        Self {
            params,
            fits: vec![None; treatments],
        }
    }

    pub fn params(&self) -> &MechanismParams {
        &self.params
    }

    /// `(P, ρ)` for cell `(j, h)` after `step` outcomes.
    pub fn cell(
        &mut self,
        counts: &CountsTensor,
        step: u64,
        j: usize,
        h: usize,
    ) -> Result<(f64, f64)> {
        counts.check(j, h)?;
        let params = self.params;
        match params.variant {
            MechanismVariant::NoBorrowing => proportion_from(
                counts.successes(j, h),
                counts.assignments(j, h),
                BorrowTerms::ZERO,
            ),
            MechanismVariant::VanishingBorrowing => proportion_from(
                counts.successes(j, h),
                counts.assignments(j, h),
                vanishing(counts, j, h, params.psi_kind, params.psi_max),
            ),
            MechanismVariant::TreatmentSimilarity => proportion_from(
                counts.successes(j, h),
                counts.assignments(j, h),
                similarity(counts, j, h, params.c_rule.at(step)),
            ),
            MechanismVariant::ModelBased => {
                let fit = self.model_fit(counts, j)?;
                proportion_from(
                    counts.successes(j, h),
                    counts.assignments(j, h),
                    BorrowTerms::from_fit(&fit),
                )
            }
            MechanismVariant::ModelBasedClustered => {
                let partition = treatment_partition(counts, j, params.c_rule.at(step));
                let cached = self.clustered_fit(counts, j, partition)?;
                let partition = cached
                    .partition
                    .as_ref()
                    .expect("clustered fit has a partition");
                let block = &partition.blocks()[partition.block_of(h)];
                let s = block.iter().map(|&k| counts.successes(j, k)).sum();
                let n = block.iter().map(|&k| counts.assignments(j, k)).sum();
                proportion_from(s, n, BorrowTerms::from_fit(&cached.fit))
            }
        }
    }

    fn needs_refit(&self, j: usize, assignments: u64) -> bool {
        match &self.fits[j] {
            None => true,
            Some(c) => assignments >= c.assignments + self.params.refit_every,
        }
    }

    fn model_fit(&mut self, counts: &CountsTensor, j: usize) -> Result<MleResult> {
        let assignments = counts.treatment_assignments(j);
        if self.needs_refit(j, assignments) {
            let hint = self.fits[j].as_ref().map(|c| c.fit);
            let fit = model_fit(counts, j, &self.params.mle, hint.as_ref())?;
            self.fits[j] = Some(CachedFit {
                assignments,
                partition: None,
                fit,
            });
        }
        Ok(self.fits[j].as_ref().expect("just fitted").fit)
    }

    fn clustered_fit(
        &mut self,
        counts: &CountsTensor,
        j: usize,
        partition: Partition,
    ) -> Result<&CachedFit> {
        let assignments = counts.treatment_assignments(j);
        let regrouped = self.fits[j]
            .as_ref()
            .is_some_and(|c| c.partition.as_ref() != Some(&partition));
        if self.needs_refit(j, assignments) || regrouped {
            let hint = self.fits[j].as_ref().map(|c| c.fit);
            let fit = clustered_fit(counts, j, &partition, &self.params.mle, hint.as_ref())?;
            self.fits[j] = Some(CachedFit {
                assignments,
                partition: Some(partition),
                fit,
            });
        }
        Ok(self.fits[j].as_ref().expect("just fitted"))
    }
}

/// Smallest own-data weight the vanishing mechanism can produce for an urn
/// with `n` own observations: `n / (ψ_max + n)`.
pub fn vanishing_weight_floor(n: u64, psi_max: f64) -> f64 {
    let n = n as f64;
    if n == 0.0 {
        0.0
    } else {
        n / (psi_max + n)
    }
}
