use std::path::PathBuf;

use crate::protocol::ProtocolError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("decode error at byte offset {offset}: {message}")]
    Decode { offset: usize, message: String },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid scale factor {factor} for {height}x{width} image")]
    InvalidScale {
        factor: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend {endpoint} unavailable: {message}")]
    BackendUnavailable { endpoint: String, message: String },

    #[error("backend {endpoint} failed during {kind}: {source}")]
    Backend {
        endpoint: String,
        kind: &'static str,
        #[source]
        source: ProtocolError,
    },

    #[error("plugin `{command}` failed: {message}\n{stderr}")]
    Plugin {
        command: String,
        message: String,
        exit_code: Option<i32>,
        stderr: String,
    },

    #[error("image {id}: {source}")]
    Image {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable machine-readable category.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Decode { .. } => "decode",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::Dimension(_) => "dimension",
            Error::InvalidScale { .. } => "invalid_scale",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::Config(_) => "config",
            Error::BackendUnavailable { .. } => "backend_unavailable",
            Error::Backend { .. } => "backend",
            Error::Plugin { .. } => "plugin",
            Error::Image { source, .. } => source.code(),
            Error::Io { .. } => "io",
            Error::Protocol(_) => "protocol",
        }
    }
}
