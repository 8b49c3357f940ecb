use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    NonConvergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("compartment {index} fell to {value:e} at t={t}; reduce the step size (dt={dt})")]
    StepSize {
        index: usize,
        value: f64,
        t: f64,
        dt: f64,
    },

    #[error("non-finite state at t={t}")]
    NonFinite { t: f64 },

    #[error("no admissible pandemic equilibrium: {0}")]
    NoAdmissibleEquilibrium(String),

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("did not converge: {0}")]
    NonConvergence(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter { .. } | Error::Config(_) => ErrorClass::Config,
            Error::Parse { .. } | Error::Data { .. } | Error::Io { .. } => ErrorClass::Data,
            Error::Degenerate(_)
            | Error::StepSize { .. }
            | Error::NonFinite { .. }
            | Error::NoAdmissibleEquilibrium(_) => ErrorClass::Numeric,
            Error::NonConvergence(_) => ErrorClass::NonConvergence,
        }
    }

    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
