//! Beta-binomial maximum likelihood for per-treatment aggregated counts.
//!
//! For one treatment with `s_h` successes out of `n_h` patients in stratum
//! `h`, the likelihood of the Beta(α, β) hyper-prior is, up to a factor free
//! of (α, β),
//!
//! ```text
//! ℓ(α, β) = Σ_h [ ln B(α + s_h, β + n_h - s_h) - ln B(α, β) ]
//! ```
//!
//! The solver works in the coordinates `μ = α / (α + β)` and `M = α + β`.
//! For fixed `M` the likelihood is strictly concave in `μ`, so the profile
//! `g(M) = max_μ ℓ` is computed with a safeguarded Newton iteration, and the
//! outer search runs over `ln M`. When `M → ∞` at `μ = s_•/n_•` the likelihood
//! approaches `n_• (z ln z + (1-z) ln(1-z))` with `z = s_•/n_•`; if nothing
//! finite beats that value the fit is reported as [`MleStatus::PooledBoundary`].

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};

use crate::error::{Error, Result};
use crate::special::{digamma_diff, ln_gamma, ln_rising, neg_entropy, trigamma_diff};

/// Per-stratum trials and successes of one treatment.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregatedSample {
    trials: Vec<u64>,
    successes: Vec<u64>,
}

impl AggregatedSample {
    pub fn new(trials: Vec<u64>, successes: Vec<u64>) -> Result<Self> {
        if trials.len() != successes.len() {
            return Err(Error::Argument(
                "trials and successes must have the same length".into(),
            ));
        }
        if let Some(h) = trials.iter().zip(&successes).position(|(n, s)| s > n) {
            return Err(Error::Argument(alloc::format!(
                "stratum {h}: successes exceed trials"
            )));
        }
        Ok(Self { trials, successes })
    }

    pub fn from_pairs(pairs: &[(u64, u64)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    pub fn trials(&self) -> &[u64] {
        &self.trials
    }

    pub fn successes(&self) -> &[u64] {
        &self.successes
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn total_trials(&self) -> u64 {
        self.trials.iter().sum()
    }

    pub fn total_successes(&self) -> u64 {
        self.successes.iter().sum()
    }

    /// The same sample with successes and failures swapped.
    pub fn flipped(&self) -> Self {
        Self {
            trials: self.trials.clone(),
            successes: self
                .trials
                .iter()
                .zip(&self.successes)
                .map(|(n, s)| n - s)
                .collect(),
        }
    }

    /// Sums strata within each block of `partition`.
    pub fn aggregate(&self, partition: &Partition) -> Result<Self> {
        if partition.num_strata() != self.len() {
            return Err(Error::Argument(alloc::format!(
                "partition covers {} strata, sample has {}",
                partition.num_strata(),
                self.len()
            )));
        }
        let mut trials = Vec::with_capacity(partition.blocks.len());
        let mut successes = Vec::with_capacity(partition.blocks.len());
        for block in &partition.blocks {
            trials.push(block.iter().map(|&h| self.trials[h]).sum());
            successes.push(block.iter().map(|&h| self.successes[h]).sum());
        }
        Ok(Self { trials, successes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MleOptions {
    /// Cap on the prior mass `α + β`.
    pub m_max: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// `ς`, used when the data cannot identify the prior.
    pub default_prior: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            m_max: 1e6,
            tol: 1e-8,
            max_iters: 200,
            default_prior: 1.0,
        }
    }
}

impl MleOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.m_max > 1.0) || !self.m_max.is_finite() {
            return Err(Error::Argument("m_max must be a finite value > 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument("tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be positive".into()));
        }
        if !(self.default_prior > 0.0) || !self.default_prior.is_finite() {
            return Err(Error::Argument("default prior must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MleStatus {
    /// Finite maximizer.
    Interior,
    /// The supremum is only approached as `α + β → ∞` at the pooled mean.
    PooledBoundary,
    /// No usable information (no data, or all successes / all failures).
    DefaultPrior,
}

impl MleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MleStatus::Interior => "interior",
            MleStatus::PooledBoundary => "pooled_boundary",
            MleStatus::DefaultPrior => "default_prior",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MleResult {
    /// `+inf` for [`MleStatus::PooledBoundary`].
    pub alpha: f64,
    /// `+inf` for [`MleStatus::PooledBoundary`].
    pub beta: f64,
    /// Prior mean `α / (α + β)`; the pooled success rate at the boundary.
    pub mean: f64,
    pub status: MleStatus,
    pub log_likelihood: f64,
}

impl MleResult {
    fn finite(alpha: f64, beta: f64, status: MleStatus, log_likelihood: f64) -> Self {
        Self {
            alpha,
            beta,
            mean: alpha / (alpha + beta),
            status,
            log_likelihood,
        }
    }

    fn boundary(mean: f64, log_likelihood: f64) -> Self {
        Self {
            alpha: f64::INFINITY,
            beta: f64::INFINITY,
            mean,
            status: MleStatus::PooledBoundary,
            log_likelihood,
        }
    }

    /// `α + β`.
    pub fn prior_mass(&self) -> f64 {
        self.alpha + self.beta
    }
}

/// `ln BetaBin(n, α, β)(s)`.
pub fn betabin_log_pmf(n: u64, alpha: f64, beta: f64, s: u64) -> Result<f64> {
    if s > n {
        return Err(Error::Argument("s must not exceed n".into()));
    }
    check_shape(alpha, beta)?;
    let ln_choose =
        ln_gamma(n as f64 + 1.0) - ln_gamma(s as f64 + 1.0) - ln_gamma((n - s) as f64 + 1.0);
    Ok(ln_choose + ln_rising(alpha, s) + ln_rising(beta, n - s) - ln_rising(alpha + beta, n))
}

/// `ℓ(α, β)`, the log-likelihood without the binomial coefficients.
pub fn profile_log_likelihood(sample: &AggregatedSample, alpha: f64, beta: f64) -> Result<f64> {
    check_shape(alpha, beta)?;
    Ok(Likelihood::new(sample).value(alpha, beta))
}

/// Sufficient condition for a finite maximizer:
/// `Σ_h n_h² (s_h/n_h - z)² > n_• z (1 - z)` with `z = s_•/n_•`.
///
/// `false` is inconclusive.
pub fn variance_condition(sample: &AggregatedSample) -> bool {
    let n_tot = sample.total_trials();
    if n_tot == 0 {
        return false;
    }
    let z = sample.total_successes() as f64 / n_tot as f64;
    let lhs: f64 = sample
        .trials
        .iter()
        .zip(&sample.successes)
        .filter(|(n, _)| **n > 0)
        .map(|(&n, &s)| {
            // n² (s/n - z)² = (s - n z)²
            let d = s as f64 - n as f64 * z;
            d * d
        })
        .sum();
    lhs > n_tot as f64 * z * (1.0 - z)
}

/// Supremum of `ℓ` along the boundary `α + β → ∞`, reached at `α/(α+β) = s_•/n_•`:
/// `n_• (z ln z + (1 - z) ln(1 - z))`. Always `≤ 0`.
pub fn boundary_supremum(sample: &AggregatedSample) -> Result<f64> {
    let n_tot = sample.total_trials();
    let s_tot = sample.total_successes();
    if s_tot == 0 || s_tot == n_tot {
        return Err(Error::DegenerateSample(
            "boundary supremum needs at least one success and one failure".into(),
        ));
    }
    Ok(n_tot as f64 * neg_entropy(s_tot as f64 / n_tot as f64))
}

/// Maximizes `ℓ` over `(α, β)`.
pub fn fit_mle(sample: &AggregatedSample, opts: &MleOptions) -> Result<MleResult> {
    fit_mle_warm(sample, opts, None)
}

/// Like [`fit_mle`], but first tries a local Newton search started from
/// `hint` (typically the previous fit of the same treatment). The global
/// search runs whenever the local one fails to settle on an interior point.
pub fn fit_mle_warm(
    sample: &AggregatedSample,
    opts: &MleOptions,
    hint: Option<&MleResult>,
) -> Result<MleResult> {
    opts.validate()?;
    let n_tot = sample.total_trials();
    let s_tot = sample.total_successes();
    let varsigma = opts.default_prior;
    let lik = Likelihood::new(sample);
    if n_tot == 0 {
        return Ok(MleResult::finite(
            varsigma,
            varsigma,
            MleStatus::DefaultPrior,
            0.0,
        ));
    }
    if s_tot == 0 || s_tot == n_tot {
        let alpha = s_tot as f64 + varsigma;
        let beta = (n_tot - s_tot) as f64 + varsigma;
        return Ok(MleResult::finite(
            alpha,
            beta,
            MleStatus::DefaultPrior,
            lik.value(alpha, beta),
        ));
    }

    let pooled = s_tot as f64 / n_tot as f64;
    let sup = n_tot as f64 * neg_entropy(pooled);
    let solver = Solver {
        lik: &lik,
        opts,
        t_hi: log(opts.m_max),
    };

    if let Some(h) = hint.filter(|h| h.status == MleStatus::Interior) {
        if let Some(p) = solver.local(log(h.prior_mass()), h.mean) {
            let cap = solver.profile(solver.t_hi, p.mu);
            if p.t < solver.t_hi && p.value >= sup - opts.tol && p.value >= cap.value {
                return Ok(solver.classify(p, pooled, sup));
            }
        }
    }
    let best = solver.global(pooled)?;
    Ok(solver.classify(best, pooled, sup))
}

/// Partition of strata into blocks; blocks are listed by increasing estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl Partition {
    pub fn new(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let num_strata = blocks.iter().map(Vec::len).sum();
        let mut block_of = vec![usize::MAX; num_strata];
        for (b, block) in blocks.iter().enumerate() {
            for &h in block {
                if h >= num_strata || block_of[h] != usize::MAX {
                    return Err(Error::Argument(
                        "blocks must cover every stratum exactly once".into(),
                    ));
                }
                block_of[h] = b;
            }
        }
        Ok(Self { blocks, block_of })
    }

    /// Every stratum on its own.
    pub fn singletons(num_strata: usize) -> Self {
        Self {
            blocks: (0..num_strata).map(|h| vec![h]).collect(),
            block_of: (0..num_strata).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_of(&self, h: usize) -> usize {
        self.block_of[h]
    }

    pub fn num_strata(&self) -> usize {
        self.block_of.len()
    }
}

/// Sorts strata by estimate and splits wherever two neighbours differ by more
/// than `c_n`.
pub fn cluster_strata(theta_hats: &[f64], c_n: f64) -> Partition {
    let mut order: Vec<usize> = (0..theta_hats.len()).collect();
    order.sort_by(|&a, &b| theta_hats[a].total_cmp(&theta_hats[b]).then(a.cmp(&b)));
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut prev = f64::NAN;
    for h in order {
        let v = theta_hats[h];
        match blocks.last_mut() {
            Some(block) if (v - prev).abs() <= c_n => block.push(h),
            _ => blocks.push(vec![h]),
        }
        prev = v;
    }
    Partition::new(blocks).expect("sorted indices form a partition")
}

/// [`fit_mle`] on the block-aggregated sample.
pub fn fit_mle_clustered(
    sample: &AggregatedSample,
    partition: &Partition,
    opts: &MleOptions,
) -> Result<MleResult> {
    fit_mle(&sample.aggregate(partition)?, opts)
}

fn check_shape(alpha: f64, beta: f64) -> Result<()> {
    if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(
            "alpha and beta must be finite and positive".into(),
        ))
    }
}

/// Non-empty strata as `(successes, failures)`.
struct Likelihood {
    cells: Vec<(u64, u64)>,
}

/// Derivative sums at one `(α, β)`: first and second derivatives of the
/// success, failure and total rising-factorial terms.
struct Derivs {
    a1: f64,
    b1: f64,
    c1: f64,
    a2: f64,
    b2: f64,
    c2: f64,
}

impl Likelihood {
    fn new(sample: &AggregatedSample) -> Self {
        Self {
            cells: sample
                .trials
                .iter()
                .zip(&sample.successes)
                .filter(|(n, _)| **n > 0)
                .map(|(&n, &s)| (s, n - s))
                .collect(),
        }
    }

    fn value(&self, alpha: f64, beta: f64) -> f64 {
        let m = alpha + beta;
        self.cells
            .iter()
            .map(|&(s, f)| ln_rising(alpha, s) + ln_rising(beta, f) - ln_rising(m, s + f))
            .sum()
    }

    fn derivs(&self, alpha: f64, beta: f64) -> Derivs {
        let m = alpha + beta;
        let mut d = Derivs {
            a1: 0.0,
            b1: 0.0,
            c1: 0.0,
            a2: 0.0,
            b2: 0.0,
            c2: 0.0,
        };
        for &(s, f) in &self.cells {
            d.a1 += digamma_diff(alpha, s);
            d.b1 += digamma_diff(beta, f);
            d.c1 += digamma_diff(m, s + f);
            d.a2 += trigamma_diff(alpha, s);
            d.b2 += trigamma_diff(beta, f);
            d.c2 += trigamma_diff(m, s + f);
        }
        d
    }

    fn mu_gradient(&self, mu: f64, m: f64) -> (f64, f64) {
        let (alpha, beta) = (mu * m, (1.0 - mu) * m);
        let mut a1 = 0.0;
        let mut b1 = 0.0;
        let mut a2 = 0.0;
        let mut b2 = 0.0;
        for &(s, f) in &self.cells {
            a1 += digamma_diff(alpha, s);
            b1 += digamma_diff(beta, f);
            a2 += trigamma_diff(alpha, s);
            b2 += trigamma_diff(beta, f);
        }
        (m * (a1 - b1), m * m * (a2 + b2))
    }
}

/// A point on the profile likelihood `g(t) = max_μ ℓ(μ e^t, (1-μ) e^t)`.
#[derive(Debug, Clone, Copy)]
struct ProfilePoint {
    t: f64,
    mu: f64,
    value: f64,
    /// `g'(t)`
    slope: f64,
    /// `g''(t)`
    curvature: f64,
}

struct Solver<'a> {
    lik: &'a Likelihood,
    opts: &'a MleOptions,
    t_hi: f64,
}

const GRID_POINTS: usize = 40;
const T_LO: f64 = -6.907_755_278_982_137; // ln 1e-3
const T_FLOOR: f64 = -27.631_021_115_928_547; // ln 1e-12

impl Solver<'_> {
    /// Maximizes the strictly concave `μ ↦ ℓ` at fixed mass `m`.
    fn inner_mu(&self, m: f64, start: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut mu = start.clamp(1e-12, 1.0 - 1e-12);
        for _ in 0..self.opts.max_iters.max(100) {
            let (d, dd) = self.lik.mu_gradient(mu, m);
            if d > 0.0 {
                lo = mu;
            } else if d < 0.0 {
                hi = mu;
            } else {
                return mu;
            }
            let mut next = mu - d / dd;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - mu).abs() <= 1e-15 * mu.max(1.0 - mu).max(1e-300) || hi - lo <= 1e-16 {
                return next;
            }
            mu = next;
        }
        mu
    }

    fn profile(&self, t: f64, mu_start: f64) -> ProfilePoint {
        let m = exp(t);
        let mu = self.inner_mu(m, mu_start);
        let (alpha, beta) = (mu * m, (1.0 - mu) * m);
        let d = self.lik.derivs(alpha, beta);
        let l_t = m * (mu * d.a1 + (1.0 - mu) * d.b1 - d.c1);
        let l_tt = l_t + m * m * (mu * mu * d.a2 + (1.0 - mu) * (1.0 - mu) * d.b2 - d.c2);
        let l_mumu = m * m * (d.a2 + d.b2);
        let l_mut = m * (d.a1 - d.b1) + m * m * (mu * d.a2 - (1.0 - mu) * d.b2);
        let curvature = if l_mumu < 0.0 {
            l_tt - l_mut * l_mut / l_mumu
        } else {
            l_tt
        };
        ProfilePoint {
            t,
            mu,
            value: self.lik.value(alpha, beta),
            slope: l_t,
            curvature,
        }
    }

    /// Undamped-but-capped Newton on `g'(t) = 0` from a previous optimum.
    fn local(&self, t0: f64, mu0: f64) -> Option<ProfilePoint> {
        let mut p = self.profile(t0.min(self.t_hi), mu0);
        for _ in 0..50 {
            if !(p.curvature < 0.0) || !p.value.is_finite() {
                return None;
            }
            let step = (-p.slope / p.curvature).clamp(-2.0, 2.0);
            let t = (p.t + step).clamp(T_FLOOR, self.t_hi);
            p = self.profile(t, p.mu);
            if step.abs() < 1e-10 {
                return Some(p);
            }
        }
        None
    }

    /// Grid over `ln M`, bracket refinement, then Newton polish.
    fn global(&self, pooled: f64) -> Result<ProfilePoint> {
        let mut t_lo = T_LO;
        let mut grid;
        loop {
            grid = Vec::with_capacity(GRID_POINTS);
            let width = (self.t_hi - t_lo) / (GRID_POINTS - 1) as f64;
            let mut mu = pooled;
            for k in 0..GRID_POINTS {
                let p = self.profile(t_lo + width * k as f64, mu);
                mu = p.mu;
                grid.push(p);
            }
            let first_is_best = grid
                .iter()
                .skip(1)
                .all(|p| p.value.is_nan() || p.value < grid[0].value);
            if first_is_best && t_lo > T_FLOOR {
                t_lo = (t_lo - 6.0).max(T_FLOOR);
                continue;
            }
            break;
        }
        let k = argmax(&grid);
        let best = grid[k];
        if k == GRID_POINTS - 1 || k == 0 {
            return Ok(best);
        }

        // golden section on [t_{k-1}, t_{k+1}]
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        let (mut a, mut b) = (grid[k - 1].t, grid[k + 1].t);
        let mut mu = best.mu;
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut pc = self.profile(c, mu);
        let mut pd = self.profile(d, mu);
        let mut best = if pc.value > best.value { pc } else { best };
        if pd.value > best.value {
            best = pd;
        }
        let mut iters = 0;
        while b - a > 1e-3 {
            iters += 1;
            if pc.value >= pd.value {
                b = d;
                d = c;
                pd = pc;
                c = b - INV_PHI * (b - a);
                mu = pd.mu;
                pc = self.profile(c, mu);
                if pc.value > best.value {
                    best = pc;
                }
            } else {
                a = c;
                c = d;
                pc = pd;
                d = a + INV_PHI * (b - a);
                mu = pc.mu;
                pd = self.profile(d, mu);
                if pd.value > best.value {
                    best = pd;
                }
            }
        }

        // Newton polish inside the final bracket, widened a little.
        let (lo, hi) = (grid[k - 1].t, grid[k + 1].t);
        let mut p = best;
        for _ in 0..self.opts.max_iters {
            iters += 1;
            if !(p.curvature < 0.0) {
                break;
            }
            let t = p.t - p.slope / p.curvature;
            if !(t > lo && t < hi) {
                break;
            }
            let next = self.profile(t, p.mu);
            let done = (t - p.t).abs() < 1e-10;
            if next.value >= best.value {
                best = next;
            }
            p = next;
            if done {
                return Ok(best);
            }
        }
        if best.value.is_finite() {
            Ok(best)
        } else {
            let (alpha, beta) = (best.mu * exp(best.t), (1.0 - best.mu) * exp(best.t));
            Err(Error::NoConvergence {
                iterations: iters,
                best: MleResult::finite(alpha, beta, MleStatus::Interior, best.value),
            })
        }
    }

    fn classify(&self, p: ProfilePoint, pooled: f64, sup: f64) -> MleResult {
        let m = exp(p.t);
        if m >= self.opts.m_max * (1.0 - self.opts.tol) || p.value < sup - self.opts.tol {
            return MleResult::boundary(pooled, sup);
        }
        MleResult::finite(p.mu * m, (1.0 - p.mu) * m, MleStatus::Interior, p.value)
    }
}

fn argmax(points: &[ProfilePoint]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.value > points[best].value {
            best = i;
        }
    }
    best
}
