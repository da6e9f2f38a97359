use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at step {step}: {what}")]
    Numeric { step: usize, what: String },

    #[error("degenerate transition matrix: {0}")]
    DegenerateChain(String),

    #[error("enumeration refused for T = {len} (limit {limit})")]
    EnumerationTooLong { len: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampler initialization failed: {0}")]
    Initialization(String),

    #[error("cannot summarize: {0}")]
    Summary(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Config(_)
                | Error::Validation(_)
                | Error::Row { .. }
                | Error::EnumerationTooLong { .. }
        )
    }
}
