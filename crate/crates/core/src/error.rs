use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Rejected input: malformed shape spec, bad grid request, invalid config.
    #[error("validation error: {0}")]
    Validation(String),
    /// Input outside the mathematical domain of an operation
    /// (negative time, spectral parameter at a pole, subcritical request, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// An iterative scheme failed to converge or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A contract between modules was violated (missing scores, mismatched reports).
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
