//! Fixed-sample and sequential inference from counts.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{floor, sqrt};

use crate::allocation::{allocation_probs, AllocationRule};
use crate::counts::CountsTensor;
use crate::error::{check_index, Error, Result};
use crate::special::{chi2_sf, normal_quantile};
use crate::trial::TrialTrace;

/// `π_j = f(θ_j) / Σ_l f(θ_l)` within one stratum.
pub fn limit_proportions(theta_col: &[f64], rule: &AllocationRule) -> Result<Vec<f64>> {
    allocation_probs(theta_col, rule)
}

/// Limit allocation proportions and variance scales for a whole design.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitQuantities {
    /// `π[j][h]`; each column sums to 1.
    pub pi: Vec<Vec<f64>>,
    /// `v[j][h] = θ(1 - θ) / (p_h π[j][h])`.
    pub v: Vec<Vec<f64>>,
}

impl LimitQuantities {
    pub fn new(theta: &[Vec<f64>], p: &[f64], rule: &AllocationRule) -> Result<Self> {
        let treatments = theta.len();
        let strata = p.len();
        if treatments == 0 || theta.iter().any(|row| row.len() != strata) {
            return Err(Error::Argument(
                "theta must be J x H with H = len(p)".into(),
            ));
        }
        let mut pi = vec![vec![0.0; strata]; treatments];
        let mut v = vec![vec![0.0; strata]; treatments];
        for h in 0..strata {
            if !(p[h] > 0.0) {
                return Err(Error::Argument(
                    "covariate probabilities must be positive".into(),
                ));
            }
            let column: Vec<f64> = theta.iter().map(|row| row[h]).collect();
            let probs = limit_proportions(&column, rule)?;
            for j in 0..treatments {
                pi[j][h] = probs[j];
                v[j][h] = column[j] * (1.0 - column[j]) / (p[h] * probs[j]);
            }
        }
        Ok(Self { pi, v })
    }

    /// `μ_h = (θ_j - θ_l) / sqrt(v_j + v_l)`.
    pub fn drift(&self, theta: &[Vec<f64>], j: usize, l: usize, h: usize) -> Result<f64> {
        check_index("treatment", j, self.v.len())?;
        check_index("treatment", l, self.v.len())?;
        check_index("stratum", h, self.v[0].len())?;
        let var = self.v[j][h] + self.v[l][h];
        let diff = theta[j][h] - theta[l][h];
        if diff == 0.0 {
            return Ok(0.0);
        }
        if !(var > 0.0) {
            return Err(Error::Undefined("drift with zero limiting variance".into()));
        }
        Ok(diff / sqrt(var))
    }
}

/// Drift `μ_h` of the sequential Wald statistic: `E[U_{h,n,t}] ≈ sqrt(n t) μ_h`.
pub fn drift(
    theta: &[Vec<f64>],
    p: &[f64],
    rule: &AllocationRule,
    j: usize,
    l: usize,
    h: usize,
) -> Result<f64> {
    LimitQuantities::new(theta, p, rule)?.drift(theta, j, l, h)
}

fn arm(counts: &CountsTensor, j: usize, h: usize) -> Result<(f64, f64)> {
    counts.check(j, h)?;
    let n = counts.assignments(j, h);
    if n == 0 {
        return Err(Error::InsufficientData(format!(
            "no patients on treatment {} in stratum {}",
            j + 1,
            h + 1
        )));
    }
    let rate = counts.successes(j, h) as f64 / n as f64;
    Ok((rate, n as f64))
}

/// Plug-in standard error of `θ̂_j - θ̂_l`.
fn difference_se(rate_j: f64, n_j: f64, rate_l: f64, n_l: f64) -> f64 {
    sqrt(rate_j * (1.0 - rate_j) / n_j + rate_l * (1.0 - rate_l) / n_l)
}

/// Wald interval for `θ_j - θ_l` in stratum `h` at level `level` (e.g. 0.95).
pub fn confidence_interval(
    counts: &CountsTensor,
    j: usize,
    l: usize,
    h: usize,
    level: f64,
) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(
            "confidence level must lie in (0, 1)".into(),
        ));
    }
    let (rj, nj) = arm(counts, j, h)?;
    let (rl, nl) = arm(counts, l, h)?;
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    let half = z * difference_se(rj, nj, rl, nl);
    let centre = rj - rl;
    Ok((centre - half, centre + half))
}

/// Wald statistic from two estimates and their sample sizes.
pub fn wald_from(est_j: f64, n_j: f64, est_l: f64, n_l: f64) -> Result<f64> {
    if !(n_j > 0.0 && n_l > 0.0) {
        return Err(Error::InsufficientData(
            "Wald statistic needs both arms observed".into(),
        ));
    }
    let se = difference_se(est_j, n_j, est_l, n_l);
    if !(se > 0.0) {
        return Err(Error::Undefined(
            "both arms have zero estimated variance".into(),
        ));
    }
    Ok((est_j - est_l) / se)
}

/// `U_{h,n}` comparing treatments `j` and `l` in stratum `h`.
pub fn wald_statistic(counts: &CountsTensor, j: usize, l: usize, h: usize) -> Result<f64> {
    let (rj, nj) = arm(counts, j, h)?;
    let (rl, nl) = arm(counts, l, h)?;
    wald_from(rj, nj, rl, nl)
}

/// Homogeneity statistic `χ_n` for stratum `h`, contrasts taken against
/// treatment 0. Asymptotically `χ²_{J-1}` when all treatments are equal.
pub fn homogeneity_chi2(counts: &CountsTensor, h: usize) -> Result<f64> {
    let treatments = counts.num_treatments();
    if treatments < 2 {
        return Err(Error::Argument(
            "homogeneity needs at least two treatments".into(),
        ));
    }
    let mut rates = Vec::with_capacity(treatments);
    let mut scaled_var = Vec::with_capacity(treatments);
    for j in 0..treatments {
        let (r, n) = arm(counts, j, h)?;
        rates.push(r);
        scaled_var.push(r * (1.0 - r) / n);
    }
    // Aᵀ diag(N)⁻¹ Σ̂ A = D₀ 11ᵀ + diag(D₁, ..., D_{J-1})
    let k = treatments - 1;
    let mut matrix = vec![vec![scaled_var[0]; k]; k];
    for (a, row) in matrix.iter_mut().enumerate() {
        row[a] += scaled_var[a + 1];
    }
    let contrast: Vec<f64> = (1..treatments).map(|a| rates[0] - rates[a]).collect();
    let x = solve(matrix, contrast.clone())?;
    Ok(contrast
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum::<f64>()
        .max(0.0))
}

/// `Pr(χ²_{J-1} > χ_n)`.
pub fn homogeneity_p_value(statistic: f64, treatments: usize) -> f64 {
    chi2_sf(statistic, (treatments - 1) as f64)
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) {
        return Err(Error::Singular("homogeneity covariance"));
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= 1e-13 * scale {
            return Err(Error::Singular("homogeneity covariance"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                let (upper, lower) = a.split_at_mut(row);
                for (x, y) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *x -= factor * y;
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// `⌊n t⌋`. A tiny slack absorbs products like `0.29 * 100 = 28.999...`.
pub fn information_step(n: u64, t: f64) -> u64 {
    floor(n as f64 * t + 1e-9) as u64
}

/// `sqrt(⌊n t_i⌋ / ⌊n t_j⌋)` for `0 < t_i ≤ t_j ≤ 1`.
pub fn canonical_covariance(t_i: f64, t_j: f64, n: u64) -> Result<f64> {
    if !(t_i > 0.0 && t_i <= t_j && t_j <= 1.0) {
        return Err(Error::Argument("need 0 < t_i <= t_j <= 1".into()));
    }
    let a = information_step(n, t_i);
    let b = information_step(n, t_j);
    if b == 0 {
        return Err(Error::Argument(
            "information time too small for this horizon".into(),
        ));
    }
    Ok(sqrt(a as f64 / b as f64))
}

/// Wald statistics of one comparison at a list of information times.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SequentialPath {
    pub stratum: usize,
    pub treatments: (usize, usize),
    pub times: Vec<f64>,
    /// `⌊n t_k⌋`
    pub steps: Vec<u64>,
    pub statistics: Vec<f64>,
}

/// `U_{h,n,t_k}` for each information time, evaluated on the trace snapshot
/// taken after `⌊n t_k⌋` patients.
pub fn sequential_path(
    trace: &TrialTrace,
    j: usize,
    l: usize,
    h: usize,
    times: &[f64],
) -> Result<SequentialPath> {
    if times.is_empty() {
        return Err(Error::Argument(
            "at least one information time is required".into(),
        ));
    }
    if times.windows(2).any(|w| w[0] > w[1]) || times.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Argument(
            "information times must be ascending in (0, 1]".into(),
        ));
    }
    let n = trace.horizon;
    let mut steps = Vec::with_capacity(times.len());
    let mut statistics = Vec::with_capacity(times.len());
    for &t in times {
        let step = information_step(n, t);
        let snap = trace.snapshot_at(step).ok_or_else(|| {
            Error::Config(format!("trace has no snapshot at step {step} (t = {t})"))
        })?;
        statistics.push(wald_statistic(&snap.counts, j, l, h)?);
        steps.push(step);
    }
    Ok(SequentialPath {
        stratum: h,
        treatments: (j, l),
        times: times.to_vec(),
        steps,
        statistics,
    })
}
