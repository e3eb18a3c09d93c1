use thiserror::Error;

pub type Result<T, E = LearnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} outside head of {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {terms}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        terms: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] beamsim_core::Error),
}

impl LearnError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        LearnError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        LearnError::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
