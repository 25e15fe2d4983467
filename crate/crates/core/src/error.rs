use thiserror::Error;

use crate::model::Violation;

/// Errors raised by the fpARMA toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operator is not self-adjoint (HS asymmetry {0:.3e})")]
    NotSelfAdjoint(f64),

    #[error("covariance is not positive semi-definite (min eigenvalue {0:.3e})")]
    NotPositiveSemiDefinite(f64),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Violation>),

    #[error("cycle operator is not power-contractive: no j <= {j_max} with ||Phi^j|| < 1")]
    NotStationary { j_max: usize },

    #[error("series too short: {0}")]
    TooShort(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
