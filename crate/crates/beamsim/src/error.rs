use beamsim_core::ErrorClass;
use beamsim_learn::LearnError;
use thiserror::Error;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] beamsim_core::Error),

    #[error(transparent)]
    Learn(#[from] LearnError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            AppError::Core(e) => e.class(),
            AppError::Learn(e) => match e {
                LearnError::Shape { .. } | LearnError::Config(_) | LearnError::LabelOutOfRange { .. } => {
                    ErrorClass::Config
                }
                LearnError::NonFinite { .. } => ErrorClass::Numeric,
                LearnError::Data(_) | LearnError::Checkpoint { .. } | LearnError::Io { .. } => ErrorClass::Data,
                LearnError::Core(c) => c.class(),
            },
            AppError::Config(_) => ErrorClass::Config,
            AppError::Data(_) | AppError::Io { .. } => ErrorClass::Data,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}
