use thiserror::Error;

/// Failure classes; each maps onto a CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidState(_) => 2,
            Error::Assumption(_) => 3,
            Error::Solver(_) => 4,
            Error::Acceptance(_) => 5,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
