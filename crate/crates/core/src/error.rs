use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("semantic error at line {line}: {msg}")]
    Semantic { line: usize, msg: String },
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("step cap of {0} exceeded")]
    StepCapExceeded(u64),
    #[error("context corrupt: {0}")]
    ContextCorrupt(String),
    #[error("trace format mismatch: {0} vs {1}")]
    FormatMismatch(String, String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("report error: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
