use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller-supplied data.
    #[error("input error: {0}")]
    Input(String),

    /// A precondition of the called operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A structure failed its own invariants (dangling edge, duplicate id, ...).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// The requested quantity has no defined value for this input.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("sequence is empty")]
    EmptySequence,

    #[error("size {got} exceeds the limit of {limit}")]
    Size { got: usize, limit: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors that indicate a broken internal invariant rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Integrity(_))
    }
}
