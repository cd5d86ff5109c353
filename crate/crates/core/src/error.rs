use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpnError {
    #[error("invalid expansion order {0}: must be at least 1")]
    InvalidOrder(usize),

    #[error("direction is not a unit vector (|omega| = {norm})")]
    NonUnitDirection { norm: f64 },

    #[error("moment assembly failed: {0}")]
    Assembly(String),

    #[error("invalid configuration: {key}: {reason}")]
    Config { key: String, reason: String },

    #[error("negative macro coefficient {value:e} at cell ({i}, {j})")]
    NegativeMacro { i: usize, j: usize, value: f64 },

    #[error("negative cell mean {0:e}")]
    NegativeMean(f64),

    #[error("limiter projection did not reach feasibility (worst residual {worst_residual:e})")]
    SolverFailure { worst_residual: f64 },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("non-finite value in {field} at cell ({i}, {j}) after step {step}")]
    NonFinite {
        field: &'static str,
        i: usize,
        j: usize,
        step: usize,
    },

    #[error("undefined quantity: {0}")]
    Undefined(String),
}

impl FpnError {
    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        FpnError::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FpnError>;
