use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("domain error: {0}")]
    Domain(String),
    /// A scenario or parameter field is missing or invalid.
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
    /// A scenario-level invariant does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// No collision-free path exists between two points.
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    /// Global planning or mission setup failed.
    #[error("mission error: {0}")]
    Mission(String),
}

impl Error {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
