use std::path::PathBuf;

/// Errors produced by the routing core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data for class {class}: need at least {needed} samples, got {got}")]
    InsufficientData {
        class: String,
        needed: usize,
        got: usize,
    },

    #[error("covariance for class {class} is not positive definite after regularization")]
    Singular { class: String },

    #[error("unknown class {0}")]
    UnknownClass(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value produced in layer {layer}")]
    Numeric { layer: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
