use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    Dimension {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("network state: {0}")]
    State(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },
}

impl Error {
    pub(crate) fn dimension(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}
