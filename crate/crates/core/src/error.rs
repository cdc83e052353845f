use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by front ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or inconsistent input data (files, manifests, shapes).
    Data,
    /// A numeric routine could not produce a finite answer.
    Numeric,
    /// A caller-supplied parameter is out of range.
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {found:?}, expected \"SEMC\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u16),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("rank {0} exceeds the maximum of 4")]
    RankTooLarge(usize),

    #[error("truncated tensor file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("trailing bytes after tensor payload: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: u64, found: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid parameter: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Config(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
