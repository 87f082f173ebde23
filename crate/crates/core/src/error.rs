use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structured input (probe file, config) failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// A dense object would exceed the configured size cap.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    /// An iterative solver failed to converge.
    #[error("solver error: {0}")]
    Solver(String),

    /// Internally inconsistent state (indicates a bug or corrupted input).
    #[error("internal consistency error: {0}")]
    Inconsistent(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 input errors, 3 solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Validation(_) | Error::SizeLimit(_) | Error::Io(_) => 2,
            Error::Solver(_) | Error::Inconsistent(_) => 3,
        }
    }
}
