use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated a documented precondition (shape, range, sign).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that must have full column rank does not.
    #[error("numerically rank-deficient input: {0}")]
    RankDeficient(String),

    /// A Gram or normal-equation matrix is too ill-conditioned to solve.
    #[error("ill-conditioned system (condition number {condition:.3e}): {context}")]
    IllConditioned { condition: f64, context: String },

    /// A VAR process failed the stationarity requirement.
    #[error("process is not stationary (spectral radius {spectral_radius:.6})")]
    NonStationary { spectral_radius: f64 },

    /// Random generation could not produce a valid instance.
    #[error("generation failed: {0}")]
    Generation(String),

    /// An iterative solver increased its objective or produced non-finite values.
    #[error("numerical failure: {message}")]
    Numerical { message: String, trace: Vec<f64> },

    /// A model-selection rule had nothing to choose from.
    #[error("selection failed: {0}")]
    Selection(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
