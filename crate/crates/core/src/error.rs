//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by model construction, filtering, and scenario execution.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad windows, negative variances,
    /// unknown preset names, malformed TOML, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Numerical breakdown: a covariance lost symmetric positive definiteness
    /// beyond what the jitter retry tolerates, or a computation produced
    /// non-finite values. Carries the simulation step where it happened when
    /// known.
    #[error("numerical error{}: {message}", fmt_step(.step))]
    Numerical {
        message: String,
        /// Discrete step index at which the failure was detected, if inside a
        /// simulation loop.
        step: Option<usize>,
    },

    /// A matrix that must be invertible (innovation covariance, triangular
    /// square-root factor) turned out singular.
    #[error("singular matrix{}: {message}", fmt_step(.step))]
    Singular {
        message: String,
        /// Discrete step index at which the failure was detected, if inside a
        /// simulation loop.
        step: Option<usize>,
    },

    /// Underlying I/O failure while reading config or writing outputs.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for configuration errors.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Numerical error without step context.
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical {
            message: msg.into(),
            step: None,
        }
    }

    /// Numerical error tagged with the simulation step that produced it.
    pub fn numerical_at(msg: impl Into<String>, step: usize) -> Self {
        Error::Numerical {
            message: msg.into(),
            step: Some(step),
        }
    }

    /// Singular-matrix error without step context.
    pub fn singular(msg: impl Into<String>) -> Self {
        Error::Singular {
            message: msg.into(),
            step: None,
        }
    }

    /// Attach a step index to a numerical or singular-matrix error that lacks
    /// one; other variants pass through unchanged.
    pub fn with_step(self, step: usize) -> Self {
        match self {
            Error::Numerical {
                message,
                step: None,
            } => Error::Numerical {
                message,
                step: Some(step),
            },
            Error::Singular {
                message,
                step: None,
            } => Error::Singular {
                message,
                step: Some(step),
            },
            other => other,
        }
    }
}

fn fmt_step(step: &Option<usize>) -> String {
    match step {
        Some(k) => format!(" at step {k}"),
        None => String::new(),
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
