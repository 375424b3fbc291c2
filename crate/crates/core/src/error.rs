use thiserror::Error;

use crate::sim::Trajectory;

pub type Result<T, E = OfoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OfoError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is numerically singular: {0}")]
    SingularMatrix(&'static str),

    #[error("plant is not Schur stable (spectral radius {radius})")]
    UnstablePlant { radius: f64 },

    #[error("Euler discretization is unstable (spectral radius {radius})")]
    UnstableDiscretization { radius: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("coupling too strong: m = {m} does not exceed c = {c}")]
    CouplingTooStrong { m: f64, c: f64 },

    #[error("rate certificate unavailable: {0}")]
    NotCertifiable(String),

    #[error("iterate left the finite range at step {step}")]
    NonFinite {
        step: usize,
        partial: Box<Trajectory>,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("parse error at key `{key}`: {reason}")]
    Parse { key: String, reason: String },
}

impl OfoError {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        OfoError::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        OfoError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
