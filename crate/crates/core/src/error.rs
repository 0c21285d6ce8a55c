use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the ES-MDA library.
#[derive(Debug, Error)]
pub enum EsmdaError {
    #[error("invalid ensemble size {0}: at least 2 members are required")]
    EnsembleSize(usize),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "alpha schedule violates the normalization sum(1/alpha) = 1 (residual {residual:e}); \
         set `allow_schedule_violation` to run anyway"
    )]
    ScheduleViolation { residual: f64 },

    #[error("forward model produced a non-finite value for member {member}")]
    ForwardNonFinite { member: usize },

    #[error(
        "analysis system (alpha*C_D + C_dd) is numerically singular; offending data indices: {indices:?}"
    )]
    Singular { indices: Vec<usize> },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<EsmdaError>,
    },

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EsmdaError {
    /// True for failures caused by the user's configuration or input files
    /// rather than by the numerics of a run.
    pub fn is_config_error(&self) -> bool {
        match self {
            EsmdaError::AtIteration { source, .. } => source.is_config_error(),
            EsmdaError::Config { .. }
            | EsmdaError::Csv { .. }
            | EsmdaError::Io { .. }
            | EsmdaError::Json(_)
            | EsmdaError::ScheduleViolation { .. }
            | EsmdaError::Dimension { .. }
            | EsmdaError::EnsembleSize(_)
            | EsmdaError::InvalidArgument(_) => true,
            EsmdaError::NonFinite(_)
            | EsmdaError::ForwardNonFinite { .. }
            | EsmdaError::Singular { .. }
            | EsmdaError::NotPositiveDefinite(_) => false,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        EsmdaError::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        EsmdaError::Dimension {
            context: context.into(),
            expected,
            found,
        }
    }
}

pub type Result<T, E = EsmdaError> = std::result::Result<T, E>;
