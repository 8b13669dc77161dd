use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    MissingFile,
    Format,
    Validation,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {found:?} in {path}, expected \"EMB1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("unsupported EMB1 version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("sidecar mismatch: {0}")]
    SidecarMismatch(String),

    #[error("sidecar parse error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("rows x dim overflows the length field ({rows} x {dim})")]
    LengthOverflow { rows: u64, dim: u64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),

    #[error("empty cluster {0}")]
    EmptyCluster(usize),

    #[error("need at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },

    #[error("{rows} rows exceed the agglomerative clustering cap of {cap}")]
    CapExceeded { rows: usize, cap: usize },

    #[error("removal would leave the concept bank empty")]
    EmptyBank,

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorClass::MissingFile
            }
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated { .. }
            | Error::Format(_)
            | Error::SidecarMismatch(_)
            | Error::Json(_)
            | Error::LengthOverflow { .. } => ErrorClass::Format,
            Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Validation,
        }
    }
}
