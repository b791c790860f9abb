use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("quadrature did not converge (relative discrepancy {discrepancy:.3e})")]
    QuadratureNotConverged { discrepancy: f64 },

    #[error("weight rejected: minimum value {min_value:.3e} is negative")]
    WeightNotNonnegative { min_value: f64 },

    #[error("pair (A, B) is not stabilizable: uncontrollable eigenvalue {re} + {im}i")]
    NotStabilizable { re: f64, im: f64 },

    #[error("Riccati solve failed: {0}")]
    Riccati(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn mismatch(field: impl Into<String>, expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        field: field.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
