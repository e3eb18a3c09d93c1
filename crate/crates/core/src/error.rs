use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid angle: {0}")]
    InvalidAngle(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("channel has no propagation paths")]
    NoPaths,

    #[error("channel has zero energy")]
    ZeroEnergy,

    #[error("{0}")]
    Invalid(String),

    #[error("parse error in {source_name}: {message}")]
    Parse {
        source_name: String,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidAngle(_)
            | Error::InvalidGeometry(_)
            | Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. } => ErrorClass::Config,
            Error::NoPaths | Error::ZeroEnergy => ErrorClass::Numeric,
            Error::Invalid(_) | Error::Parse { .. } | Error::Io { .. } => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
