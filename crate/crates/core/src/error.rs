use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("cannot decode {path}: {reason}")]
    NonImageFile { path: PathBuf, reason: String },

    #[error("invalid split ratios: {0}")]
    BadRatios(String),

    #[error("manifest schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("manifest validation failed: {0}")]
    InvalidManifest(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("guiding mask degenerate after {attempts} attempts (best foreground {best} < {required})")]
    DegenerateMask {
        attempts: usize,
        best: usize,
        required: usize,
    },

    #[error("non-finite value in {0}")]
    NumericNonFinite(String),

    #[error("architecture mismatch: checkpoint {found}, expected {expected}")]
    ArchMismatch { found: String, expected: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("entry {0} has no ground-truth mask")]
    MissingMask(String),

    #[error("pool too small: need {needed}, {pool} pool has {available}")]
    PoolTooSmall {
        pool: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("session is complete")]
    SessionComplete,

    #[error("session is incomplete ({answered}/{total} answered)")]
    SessionIncomplete { answered: usize, total: usize },

    #[error("trial {0} already answered")]
    DuplicateResponse(usize),

    #[error("unknown trial {0}")]
    UnknownTrial(usize),

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("masked output diverges from source at {0} unmasked pixel(s)")]
    CompositionViolation(usize),

    #[error("tensor backend: {0}")]
    Backend(#[from] candle_core::Error),
}

impl Error {
    /// Stable machine-readable code for the error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DIMENSION_MISMATCH",
            Error::NonImageFile { .. } => "NON_IMAGE_FILE",
            Error::BadRatios(_) => "BAD_RATIOS",
            Error::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            Error::InvalidManifest(_) => "INVALID_MANIFEST",
            Error::Io { .. } => "IO_ERROR",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::DegenerateMask { .. } => "DEGENERATE_MASK",
            Error::NumericNonFinite(_) => "NUMERIC_NONFINITE",
            Error::ArchMismatch { .. } => "ARCH_MISMATCH",
            Error::CorruptCheckpoint(_) => "CORRUPT_CHECKPOINT",
            Error::EmptySplit(_) => "EMPTY_SPLIT",
            Error::EmptyInput(_) => "EMPTY_INPUT",
            Error::MissingMask(_) => "MISSING_MASK",
            Error::PoolTooSmall { .. } => "POOL_TOO_SMALL",
            Error::SessionComplete => "SESSION_COMPLETE",
            Error::SessionIncomplete { .. } => "SESSION_INCOMPLETE",
            Error::DuplicateResponse(_) => "DUPLICATE_RESPONSE",
            Error::UnknownTrial(_) => "UNKNOWN_TRIAL",
            Error::UnknownSession(_) => "UNKNOWN_SESSION",
            Error::CompositionViolation(_) => "COMPOSITION_VIOLATION",
            Error::Backend(_) => "BACKEND_ERROR",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
