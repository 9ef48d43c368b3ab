use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
///
/// `Config` and `Usage` map to CLI exit code 2; everything else to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid record: {0}")]
    Validation(String),

    #[error("configuration error: {field}: {message}")]
    Config { field: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("feature leakage: record day {record_day} precedes history table day {as_of_day}")]
    Leakage { record_day: u32, as_of_day: u32 },

    #[error("degenerate labels: training needs both classes")]
    DegenerateLabels,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{0}")]
    Metric(String),

    #[error("missing ground truth for pair {0}")]
    MissingPair(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration or invocation.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Usage(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
