use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid palette cardinality: {0} channel divisions (expected 2..=16)")]
    InvalidCardinality(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("split {split} has no legal colors for {shape}")]
    EmptySplit { split: String, shape: String },

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("sequence of length {len} exceeds capacity {max} ({what})")]
    Capacity { what: &'static str, len: usize, max: usize },

    #[error("non-finite {what} in layer {layer}")]
    Numerical { layer: usize, what: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("insufficient attribute coverage, missing cells: {}", .0.join(", "))]
    Coverage(Vec<String>),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("probe for factor `{factor}` did not converge: {reason}")]
    ProbeDivergence { factor: String, reason: String },

    #[error("I/O error at {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidCardinality(_)
                | Error::InvalidParameter { .. }
                | Error::EmptySplit { .. }
                | Error::Config(_)
        )
    }
}
