use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DlgfaError>;

#[derive(Debug, Error)]
pub enum DlgfaError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("sequence length {got} exceeds model maximum T={max}")]
    SequenceLength { got: usize, max: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error at `{key}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DlgfaError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        DlgfaError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DlgfaError::Io {
            path: path.into(),
            source,
        }
    }
}
