use crate::estimator::PrecisionEstimates;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid penalty: {0}")]
    Penalty(String),
    #[error("no convergence after {iterations} iterations (relative change {relative_change:.3e})")]
    Convergence {
        iterations: usize,
        relative_change: f64,
        last: Box<PrecisionEstimates>,
    },
    #[error("invalid fold plan: {0}")]
    Fold(String),
    #[error("regression failed: {0}")]
    Regression(String),
    #[error("path enumeration aborted: {0}")]
    Enumeration(String),
    #[error("mixture fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
