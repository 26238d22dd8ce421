//! Interacting urns design (IUD) for stratified, multi-arm, binary-response
//! trials.
//!
//! Every patient carries a categorical covariate (the stratum). For each
//! treatment and stratum there is an urn whose proportion of white balls
//! estimates the success probability there, borrowing information from the
//! other strata through one of several update mechanisms. Patients are then
//! randomized with probabilities proportional to `f(P)`.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and the
//! parallel Monte Carlo driver live in the `iud` crate.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod allocation;
pub mod counts;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod mle;
pub mod scenario;
pub mod special;
pub mod trial;
pub mod urn;

pub use allocation::AllocationRule;
pub use counts::{CountsTensor, TrialState};
pub use error::{Error, Result};
pub use mle::{AggregatedSample, MleOptions, MleResult, MleStatus};
pub use scenario::{Scenario, ScenarioKind};
pub use trial::{run_trial, Snapshot, TrialConfig, TrialTrace};
pub use urn::{BorrowTerms, CRule, MechanismParams, MechanismVariant, PsiKind};
