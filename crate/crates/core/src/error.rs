use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config value for `{key}`: {message}")]
    ConfigInvalid { key: String, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint not found: {}", .0.display())]
    CheckpointNotFound(PathBuf),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("checkpoint was written for config {found:016x}, running config is {expected:016x}")]
    ConfigHashMismatch { found: u64, expected: u64 },

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("image error for {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("io error for {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(key: &str, message: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

impl Error {
    /// Stable snake-case identifier of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ConfigParse { .. } => "config_parse",
            Error::ConfigInvalid { .. } => "config_invalid",
            Error::Manifest(_) => "manifest",
            Error::Shape(_) => "shape",
            Error::Precondition(_) => "precondition",
            Error::NonFinite(_) => "non_finite",
            Error::CheckpointNotFound(_) => "checkpoint_not_found",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::CheckpointCorrupt(_) => "checkpoint_corrupt",
            Error::ConfigHashMismatch { .. } => "config_hash_mismatch",
            Error::Stats(_) => "stats",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// Whether the error stems from how the program was invoked (bad config,
    /// overrides or input paths) rather than from a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::ConfigParse { .. }
                | Error::ConfigInvalid { .. }
                | Error::CheckpointNotFound(_)
                | Error::ConfigHashMismatch { .. }
        )
    }
}
