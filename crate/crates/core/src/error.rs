use alloc::boxed::Box;
use alloc::string::String;

use crate::penalized::FittedLinearModel;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("coordinate descent did not converge within {sweeps} sweeps (last max change {max_change:e})")]
    NotConverged {
        sweeps: usize,
        max_change: f64,
        last: Box<FittedLinearModel>,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("propensity score outside (0, 1): {0}")]
    Propensity(f64),
    #[error("relative rule quality undefined: optimal value {optimal} is too close to zero (raw value {value})")]
    UndefinedRatio { value: f64, optimal: f64 },
    #[error("test set carries no potential outcomes")]
    MissingPotentialOutcomes,
    #[error("every super learner base learner failed: {0}")]
    AllLearnersFailed(String),
}
