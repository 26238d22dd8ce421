#![allow(dead_code)]

use iud_core::CountsTensor;
use proptest::collection::vec;
use proptest::prelude::*;

pub const CASES: u32 = 1000;

pub fn config() -> ProptestConfig {
    ProptestConfig::with_cases(CASES)
}

pub fn rows(flat: &[u64], treatments: usize, strata: usize) -> Vec<Vec<u64>> {
    (0..treatments)
        .map(|j| flat[j * strata..(j + 1) * strata].to_vec())
        .collect()
}

/// Counts with `J ∈ [2, max_j]`, `H ∈ [1, max_h]` and cell counts below `max`.
pub fn counts(max_j: usize, max_h: usize, max: u64) -> impl Strategy<Value = CountsTensor> {
    (2..=max_j, 1..=max_h).prop_flat_map(move |(j, h)| {
        (vec(0..max, j * h), vec(0..max, j * h)).prop_map(move |(s, f)| {
            CountsTensor::from_rows(&rows(&s, j, h), &rows(&f, j, h)).unwrap()
        })
    })
}

/// Swaps successes and failures.
pub fn flipped(c: &CountsTensor) -> CountsTensor {
    let s: Vec<Vec<u64>> = (0..c.num_treatments())
        .map(|j| c.failures_row(j).to_vec())
        .collect();
    let f: Vec<Vec<u64>> = (0..c.num_treatments())
        .map(|j| c.successes_row(j).to_vec())
        .collect();
    CountsTensor::from_rows(&s, &f).unwrap()
}
