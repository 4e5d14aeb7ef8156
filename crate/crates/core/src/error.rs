use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
///
/// Configuration-level problems (`Config`, `InvalidParam`) are distinguished
/// from runtime failures so callers (the CLI in particular) can map them to
/// distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: shape mismatch, expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A parameter outside its documented domain (stride 0, patch larger
    /// than the image, ...).
    #[error("{0}")]
    InvalidParam(String),

    /// An inconsistent run configuration (e.g. multi-discriminator mode on a
    /// single-dataset manifest).
    #[error("{0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {detail}", path.display())]
    ImageFormat { path: PathBuf, detail: String },

    #[error("{}:{line}: {detail}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{}: unsupported checkpoint version {found} (expected {expected})", path.display())]
    CheckpointVersion {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("{}: checkpoint checksum mismatch (file corrupt)", path.display())]
    CheckpointChecksum { path: PathBuf },

    #[error("{}: malformed checkpoint: {detail}", path.display())]
    CheckpointFormat { path: PathBuf, detail: String },

    #[error("{}: checkpoint holds a '{found}' model, expected '{expected}'", path.display())]
    CheckpointArch {
        path: PathBuf,
        found: String,
        expected: String,
    },
}

impl Error {
    /// True for errors that indicate a bad configuration or parameter rather
    /// than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidParam(_)
                | Error::Manifest { .. }
                | Error::CheckpointArch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
