use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the acquisition / storage / reconstruction chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("sample out of range: value {value} does not fit in {bit_depth} bits")]
    SampleOutOfRange { value: u32, bit_depth: u8 },

    #[error("truncated file: expected {expected} bytes of sample data, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("bit depth {bit_depth} cannot be represented by format {format}")]
    DepthFormatMismatch { bit_depth: u8, format: &'static str },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("least-squares system is rank deficient (rank {rank} < {needed})")]
    RankDeficient { rank: usize, needed: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps the error with a short description of what was being processed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True when the root cause is bad input data rather than a usage problem.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_data_error(),
            Error::InvalidArgument(_) | Error::Config(_) => false,
            _ => true,
        }
    }
}
