use std::fmt;

/// Error type shared across the library.
#[derive(Debug)]
pub enum SluError {
    /// A caller violated an operation precondition.
    InvalidArgument(String),
    /// A data file could not be parsed; carries file context and line number where known.
    Parse { path: String, line: usize, message: String },
    /// A checkpoint file is malformed or incompatible with the target model.
    Checkpoint(String),
    /// Training or evaluation hit a non-recoverable numeric condition.
    Numeric(String),
    Io(std::io::Error),
}

impl fmt::Display for SluError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SluError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            SluError::Parse { path, line, message } => {
                write!(f, "parse error in {path}:{line}: {message}")
            }
            SluError::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            SluError::Numeric(m) => write!(f, "numeric error: {m}"),
            SluError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for SluError {}

impl From<std::io::Error> for SluError {
    fn from(e: std::io::Error) -> Self {
        SluError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, SluError>;
