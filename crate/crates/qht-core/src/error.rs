//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by operator construction, filtering, and scenario runs.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Fock truncation dimension below the minimum of 2.
    #[error("invalid dimension {0}: Fock truncation requires dim >= 2")]
    InvalidDimension(usize),

    /// Two operands with incompatible matrix dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A state that should be normalized is not.
    #[error("non-unit trace: tr = {0}")]
    NonUnitTrace(f64),

    /// The integration step produced an invalid state; reduce dt.
    #[error("step-size fault: {0}")]
    StepSize(String),

    /// Numerical integrity check failed (Hermiticity drift, NaN, ...).
    #[error("numerical fault: {0}")]
    NumericalFault(String),

    /// Fock truncation leakage above the configured ceiling.
    #[error("truncation leakage {leakage:.3e} exceeds ceiling {ceiling:.3e}")]
    TruncationLeakage { leakage: f64, ceiling: f64 },

    /// Classical grid too small: probability mass reached the boundary.
    #[error("grid too small: boundary mass fraction {0:.3e} exceeds ceiling {1:.3e}")]
    GridTooSmall(f64, f64),

    /// Configuration or parameter validation failure.
    #[error("validation error: {0}")]
    Validation(String),

    /// File or serialization failure in record/run output.
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
