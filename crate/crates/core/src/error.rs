use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The split between [`Error::is_format`] and the rest is load-bearing: the
/// command line maps format/IO problems to exit code 2 and every other
/// failure to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Malformed file contents (bad magic, truncated payload, wrong pixel format).
    #[error("format error: {0}")]
    Format(String),

    /// FMAP file carries a magic with a version this build does not read.
    #[error("unsupported FMAP version {found:?} (expected \"FMAPv001\")")]
    Version { found: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Region masks disagree between source and target sides.
    #[error("mask error: {0}")]
    Mask(String),

    /// A pluggable component (stylizer, energy function) broke its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("missing depth maps for views: {}", .0.join(", "))]
    MissingDepth(Vec<String>),

    #[error("loss became non-finite at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// True for file-format and I/O failures.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Image { .. } | Error::Format(_) | Error::Version { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
