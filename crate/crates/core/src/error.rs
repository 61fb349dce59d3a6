//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (parameter ranges, train settings, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller handed us data that violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Array shapes do not line up.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// Parallel planes, singular normal systems and friends.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// On-disk bytes disagree with the sidecar/manifest.
    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("not found: {path}")]
    NotFound { path: PathBuf },

    #[error("unsupported checkpoint format version {found} (this build reads version {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    /// Checkpoint weight names do not match the architecture being loaded.
    #[error("checkpoint/architecture mismatch: missing {missing:?}, unexpected {unexpected:?}")]
    CheckpointMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    /// Shape-prior cache files absent for these subjects.
    #[error("shape prior cache missing for subjects {0:?}")]
    MissingPriors(Vec<String>),

    #[error("output directory {0} exists and is not empty (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("generation failed: {0}")]
    Generation(String),

    /// Training diverged; the last finite-loss checkpoint is kept on disk.
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (lr {lr}); last good checkpoint: {last_good:?}"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        lr: f64,
        last_good: Option<PathBuf>,
    },

    #[error("failed to parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

impl Error {
    /// True for errors a user can fix (bad flags, missing files, bad config),
    /// as opposed to internal invariant violations.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidInput(_)
                | Error::Io { .. }
                | Error::NotFound { .. }
                | Error::MissingPriors(_)
                | Error::OutputExists(_)
                | Error::Corrupt { .. }
                | Error::CheckpointVersion { .. }
                | Error::Parse { .. }
        )
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path }
        } else {
            Error::Io { path, source }
        }
    }
}
