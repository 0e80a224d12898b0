use thiserror::Error;

/// Errors raised by fitting, calibration, and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A mixture component collapsed (vanishing weight or singular dispersion).
    #[error("degenerate fit at iteration {iteration}: {message}")]
    DegenerateFit { iteration: usize, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Too many replications of a Monte Carlo diagnostic failed to fit.
    #[error("diagnostics aborted: {failed} of {total} replications failed")]
    Diagnostics { failed: usize, total: usize },

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    /// Wraps an error with the pipeline stage it occurred in.
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
