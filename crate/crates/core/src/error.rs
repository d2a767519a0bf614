use thiserror::Error;

/// Errors produced by the kinematics, controller, simulator and I/O layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Robot and obstacle coincide, so no repulsion direction exists.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A linear solve or integration produced non-finite values.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Integration pushed a joint outside its limits; the run halts here.
    #[error("joint {joint} left its limits at t = {t:.3} s: q = {value:.6} rad not in [{min:.6}, {max:.6}]")]
    JointLimitViolation {
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
        t: f64,
    },

    /// Malformed configuration text.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Well-formed configuration that breaks a constraint.
    #[error("invalid `{field}`: {constraint}")]
    Validation { field: String, constraint: String },

    /// Metrics requested on a log without records.
    #[error("trajectory log is empty")]
    EmptyLog,

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub fn validation(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Configuration problems (exit code 1) as opposed to runtime failures (exit code 2).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::EmptyLog
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
