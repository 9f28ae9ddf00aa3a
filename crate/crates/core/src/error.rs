use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
///
/// Variants are grouped by [`ErrorCategory`] so front ends can report a
/// stable, machine-parsable category alongside the message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("parameter/gradient name mismatch: {}", .names.join(", "))]
    NameMismatch { names: Vec<String> },

    #[error("stage contract violated: {0}")]
    StageContract(String),

    #[error("stats scope mismatch: stats computed on {stats}, patch belongs to {patch}")]
    ScopeMismatch { stats: String, patch: String },

    #[error("checkpoint: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint: truncated ({needed} bytes needed, {available} available)")]
    Truncated { needed: usize, available: usize },

    #[error("checkpoint: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("checkpoint: malformed payload: {0}")]
    MalformedCheckpoint(String),

    #[error("architecture hash mismatch: checkpoint {checkpoint}, requested {requested}")]
    ArchMismatch { checkpoint: String, requested: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Usage,
    Data,
    Numeric,
    Contract,
    Checkpoint,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Usage => "usage",
            ErrorCategory::Data => "data",
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Contract => "contract",
            ErrorCategory::Checkpoint => "checkpoint",
            ErrorCategory::Io => "io",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Shape { .. } | Error::Config(_) | Error::NameMismatch { .. } => {
                ErrorCategory::Config
            }
            Error::Usage(_) => ErrorCategory::Usage,
            Error::Data(_) | Error::Csv(_) => ErrorCategory::Data,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::GradCheck(_) => ErrorCategory::Numeric,
            Error::StageContract(_) | Error::ScopeMismatch { .. } | Error::ArchMismatch { .. } => {
                ErrorCategory::Contract
            }
            Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Truncated { .. }
            | Error::Checksum { .. }
            | Error::MalformedCheckpoint(_) => ErrorCategory::Checkpoint,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Json(_) => ErrorCategory::Config,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
