use thiserror::Error;

/// Errors raised by the estimators, models and oracles in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state space of size {size} exceeds the cap of {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("markov chain is not ergodic (|lambda_1| = {0})")]
    NonErgodic(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid cooling schedule: {0}")]
    InvalidSchedule(String),

    #[error("overlap condition violated at step {step}: overlap {overlap} < {required}")]
    OverlapViolated {
        step: usize,
        overlap: f64,
        required: f64,
    },

    #[error("proxy mean is zero: all {samples} classical samples were 0")]
    ZeroProxyMean { samples: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("contract violated: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
