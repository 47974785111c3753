use std::path::Path;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed text input; carries the 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Input violates a documented precondition (ranges, dimensions, labels).
    #[error("{0}")]
    Validation(String),

    #[error("{path}: {msg}")]
    Io { path: String, msg: String },

    /// Binary payload does not match its declared layout.
    #[error("{0}")]
    Format(String),

    /// Graph file was built from a different embedding table.
    #[error("graph does not match embedding table: {0}")]
    HashMismatch(String),

    /// An iterative numeric procedure hit its cap before reaching tolerance.
    #[error("diffusion did not converge within {0} iterations")]
    Convergence(usize),

    /// Request exceeds a hard size bound.
    #[error("{0}")]
    Capacity(String),

    /// Concept label absent from the vocabulary and no vector supplied.
    #[error("unknown concept '{0}': not in vocabulary; supply an embedding vector to anchor it")]
    UnknownConcept(String),
}

impl Error {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        let msg = if err.kind() == std::io::ErrorKind::NotFound {
            "file not found".to_string()
        } else {
            err.to_string()
        };
        Error::Io {
            path: path.display().to_string(),
            msg,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
