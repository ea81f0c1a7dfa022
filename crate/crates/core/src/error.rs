use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error in {field}: {message}")]
    Parse { field: String, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch in {network}: {message}")]
    Shape { network: String, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("brute-force search refused: {assignments} assignments exceed cap {cap}")]
    OracleRefused { assignments: f64, cap: u64 },

    #[error("replay buffer holds {size} transitions, {needed} required")]
    InsufficientData { size: usize, needed: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Maps a serde_json failure onto a parse error. serde_json reports the
    /// offending field name in its message for missing/invalid fields.
    pub(crate) fn json(context: &str, err: serde_json::Error) -> Self {
        Error::Parse {
            field: context.to_string(),
            message: err.to_string(),
        }
    }
}
