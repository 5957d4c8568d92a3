//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the solver, simulator and file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} out of domain: {detail}")]
    Domain { what: &'static str, detail: String },

    /// A dual point that leaves some power ratio unbounded (zero price with positive rate weight).
    #[error("infeasible dual point{}: {reason}", sample.map(|s| format!(" at sample {s}")).unwrap_or_default())]
    InfeasibleDual { sample: Option<usize>, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {kind}: {detail}")]
    Parse { kind: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn infeasible(reason: impl Into<String>) -> Self {
        Error::InfeasibleDual {
            sample: None,
            reason: reason.into(),
        }
    }

    /// Attach the index of the offending Monte-Carlo realization.
    pub fn at_sample(self, index: usize) -> Self {
        match self {
            Error::InfeasibleDual { reason, .. } => Error::InfeasibleDual {
                sample: Some(index),
                reason,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
