use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("month {month}: invariant `{invariant}` violated: {detail}")]
    Invariant {
        month: u32,
        invariant: &'static str,
        detail: String,
    },

    #[error("rank-deficient design matrix, dependent columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("covariate join failed, unmatched APCs: {}", .0.join(", "))]
    UnmatchedCovariates(Vec<String>),

    #[error("scenario `{scenario}` seed {seed}: {source}")]
    Run {
        scenario: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True when the error (or the error it wraps) is an invariant violation.
    pub fn is_invariant(&self) -> bool {
        match self {
            Error::Invariant { .. } => true,
            Error::Run { source, .. } => source.is_invariant(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
