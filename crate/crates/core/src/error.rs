//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file (CSV data, model file, dump header, ...).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A contract violation on arguments or state.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Numerical failure (non-finite kernel, singular Hessian, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Every draw of the simulated probability for one observation
    /// underflowed to zero; the likelihood is -inf at these parameters.
    #[error("simulated probability is zero for unit `{unit}`")]
    ZeroSimulatedProbability { unit: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
