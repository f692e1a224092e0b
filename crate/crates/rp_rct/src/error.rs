//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its mathematical domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A requested design cannot be realized.
    #[error("infeasible design: {0}")]
    Infeasible(String),

    /// Estimation cannot proceed because the data are degenerate
    /// (empty arm or subsample, vanishing denominator, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// The cheater rate is not identified by the given design.
    #[error("cheater rate not identified: {0}")]
    Unidentified(String),

    /// Model fitting failed structurally (not merely non-convergence).
    #[error("model error: {0}")]
    Model(String),

    /// A dataset violated its declared schema.
    #[error("schema violation: {0}")]
    Schema(String),

    /// A configuration document failed validation. `pointer` is a
    /// JSON-pointer-style location of the offending field.
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    /// Too many bootstrap resamples were degenerate.
    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    /// Whether this error reflects bad user input (CLI exit code 2) rather
    /// than a statistical failure on valid input (exit code 1).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Infeasible(_)
                | Error::Schema(_)
                | Error::Config { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }

    /// Whether this error comes from the data being statistically unusable
    /// (an empty arm, unidentified design, failed fit) rather than from bad
    /// inputs. Bootstrap resampling skips and counts these.
    pub fn is_statistical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_) | Error::Unidentified(_) | Error::Model(_)
        )
    }
}
