//! Sufficient statistics of a running trial.
//!
//! Treatments and strata are 0-based here; the CLI and CSV files use 1-based
//! labels.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_index, Result};

/// Successes and failures per (treatment, stratum), row-major by treatment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CountsTensor {
    treatments: usize,
    strata: usize,
    successes: Vec<u64>,
    failures: Vec<u64>,
}

impl CountsTensor {
    pub fn new(treatments: usize, strata: usize) -> Self {
        Self {
            treatments,
            strata,
            successes: vec![0; treatments * strata],
            failures: vec![0; treatments * strata],
        }
    }

    /// Builds counts from `successes[j][h]` and `failures[j][h]`.
    pub fn from_rows(successes: &[Vec<u64>], failures: &[Vec<u64>]) -> Result<Self> {
        let treatments = successes.len();
        let strata = successes.first().map_or(0, Vec::len);
        if failures.len() != treatments
            || successes
                .iter()
                .chain(failures)
                .any(|row| row.len() != strata)
        {
            return Err(crate::Error::Argument(
                "success and failure matrices must have identical J x H shape".into(),
            ));
        }
        Ok(Self {
            treatments,
            strata,
            successes: successes.concat(),
            failures: failures.concat(),
        })
    }

    pub fn num_treatments(&self) -> usize {
        self.treatments
    }

    pub fn num_strata(&self) -> usize {
        self.strata
    }

    #[inline]
    fn idx(&self, j: usize, h: usize) -> usize {
        debug_assert!(j < self.treatments && h < self.strata);
        j * self.strata + h
    }

    pub fn check(&self, j: usize, h: usize) -> Result<()> {
        check_index("treatment", j, self.treatments)?;
        check_index("stratum", h, self.strata)
    }

    #[inline]
    pub fn successes(&self, j: usize, h: usize) -> u64 {
        self.successes[self.idx(j, h)]
    }

    #[inline]
    pub fn failures(&self, j: usize, h: usize) -> u64 {
        self.failures[self.idx(j, h)]
    }

    #[inline]
    pub fn assignments(&self, j: usize, h: usize) -> u64 {
        let i = self.idx(j, h);
        self.successes[i] + self.failures[i]
    }

    /// Per-stratum successes of treatment `j`.
    pub fn successes_row(&self, j: usize) -> &[u64] {
        &self.successes[j * self.strata..(j + 1) * self.strata]
    }

    /// Per-stratum failures of treatment `j`.
    pub fn failures_row(&self, j: usize) -> &[u64] {
        &self.failures[j * self.strata..(j + 1) * self.strata]
    }

    /// `S_{j,.}` summed over strata.
    pub fn treatment_successes(&self, j: usize) -> u64 {
        self.successes_row(j).iter().sum()
    }

    /// `N_{j,.}` summed over strata.
    pub fn treatment_assignments(&self, j: usize) -> u64 {
        self.successes_row(j).iter().sum::<u64>() + self.failures_row(j).iter().sum::<u64>()
    }

    /// `N_{.,h}` summed over treatments.
    pub fn stratum_assignments(&self, h: usize) -> u64 {
        (0..self.treatments).map(|j| self.assignments(j, h)).sum()
    }

    pub fn total(&self) -> u64 {
        self.successes.iter().sum::<u64>() + self.failures.iter().sum::<u64>()
    }

    /// Adds one outcome to cell `(j, h)`.
    pub fn record(&mut self, h: usize, j: usize, success: bool) -> Result<()> {
        self.check(j, h)?;
        let i = self.idx(j, h);
        if success {
            self.successes[i] += 1;
        } else {
            self.failures[i] += 1;
        }
        Ok(())
    }

    /// Success rate `S/N` in cell `(j, h)`, 0 when the cell is empty.
    pub fn theta_hat(&self, j: usize, h: usize) -> Result<f64> {
        self.check(j, h)?;
        Ok(self.rate(j, h))
    }

    #[inline]
    pub(crate) fn rate(&self, j: usize, h: usize) -> f64 {
        ratio(self.successes(j, h), self.assignments(j, h))
    }

    /// Success rate of treatment `j` over every stratum except `h`, 0 when
    /// there is nothing outside `h`.
    pub fn theta_hat_outside(&self, j: usize, h: usize) -> Result<f64> {
        self.check(j, h)?;
        let (s, n) = self.outside(j, h);
        Ok(ratio(s, n))
    }

    /// `(S, N)` of treatment `j` summed over strata other than `h`.
    pub(crate) fn outside(&self, j: usize, h: usize) -> (u64, u64) {
        let s_row = self.successes_row(j);
        let f_row = self.failures_row(j);
        let mut s = 0;
        let mut n = 0;
        for k in (0..self.strata).filter(|&k| k != h) {
            s += s_row[k];
            n += s_row[k] + f_row[k];
        }
        (s, n)
    }

    /// Whether every entry is at least the corresponding entry of `earlier`.
    pub fn dominates(&self, earlier: &CountsTensor) -> bool {
        self.treatments == earlier.treatments
            && self.strata == earlier.strata
            && self
                .successes
                .iter()
                .zip(&earlier.successes)
                .all(|(a, b)| a >= b)
            && self
                .failures
                .iter()
                .zip(&earlier.failures)
                .all(|(a, b)| a >= b)
    }
}

#[inline]
pub(crate) fn ratio(s: u64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

/// Counts plus the number of recorded outcomes.
///
/// The random generator is owned by the caller and passed to the trial loop
/// explicitly; the state itself is plain data.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialState {
    pub step: u64,
    pub counts: CountsTensor,
}

impl TrialState {
    pub fn new(treatments: usize, strata: usize) -> Self {
        Self {
            step: 0,
            counts: CountsTensor::new(treatments, strata),
        }
    }

    pub fn record_outcome(&mut self, h: usize, j: usize, success: bool) -> Result<()> {
        self.counts.record(h, j, success)?;
        self.step += 1;
        Ok(())
    }
}
