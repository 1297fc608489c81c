use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two artifacts that must agree (shapes, class maps, splits) do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// Too much of a requested chip fell outside the raster.
    #[error("chip coverage too low: {in_bounds:.1}% of samples inside the raster (need more than 50%)")]
    Coverage { in_bounds: f64 },

    /// A tensor went non-finite during a forward or backward pass.
    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
