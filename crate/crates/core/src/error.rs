use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes or out-of-range settings in a model, config or call.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called outside its contract (wrong variant, bad probability vector, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("numerical divergence at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] crate::io::checkpoint::CheckpointError),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Shape { .. } => 1,
            Error::Config(_) | Error::Checkpoint(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Io { .. } | Error::Image(_) => 1,
        }
    }
}
