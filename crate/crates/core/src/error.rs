use alloc::string::String;

use crate::mle::MleResult;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("statistic undefined: {0}")]
    Undefined(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("maximum-likelihood solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize, best: MleResult },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),
}

pub(crate) fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index < size {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, size })
    }
}
