use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("failed to load dataset {path}: {reason}")]
    Load { path: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("training diverged at step {step}: {reason}")]
    Training {
        step: usize,
        reason: String,
        trace: Vec<f64>,
    },

    #[error("test undefined: {0}")]
    UndefinedTest(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("missing upstream artifact {}: {reason}", path.display())]
    MissingArtifact {
        path: std::path::PathBuf,
        reason: String,
    },

    #[error("malformed artifact {}: {reason}", path.display())]
    Artifact {
        path: std::path::PathBuf,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
