use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for an operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A single invalid setting (window sizes, resample ratios, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Run-config validation reports every violated field at once.
    #[error("invalid run config:\n  {}", violations.join("\n  "))]
    InvalidRunConfig { violations: Vec<String> },

    /// API misuse (non-scalar loss, missing gradient, empty batch, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// On-disk data failed magic/version/checksum validation.
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("bad json in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

impl Error {
    pub fn dimension(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code as exposed by the CLI: 2 for config validation
    /// failures, 3 for corrupt data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidRunConfig { .. } | Error::Config(_) => 2,
            Error::CorruptFile { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
