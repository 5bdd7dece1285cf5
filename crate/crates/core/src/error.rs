use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("microstructure generation failed: {0}")]
    GenerationFailed(String),

    /// A descriptor that has no value for this structure, e.g. the tortuosity
    /// of a phase that does not percolate. Callers record it as missing.
    #[error("undefined descriptor: {0}")]
    UndefinedDescriptor(String),

    #[error("oracle input too large: {cells} cells exceeds limit {limit}")]
    OracleTooLarge { cells: usize, limit: usize },

    #[error("transform fit failed: {0}")]
    FitFailed(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
