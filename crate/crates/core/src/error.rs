use thiserror::Error;

/// Errors produced by the estimation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("coverage violated at (s, a) pairs {0:?}")]
    Coverage(Vec<(usize, usize)>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("data source mismatch: expected {expected}, got {found}")]
    SourceMismatch { expected: String, found: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
