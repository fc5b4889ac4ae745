use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed container or header.
    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    /// Well-formed input using an encoding this crate does not read.
    #[error("unsupported `{field}`: {message}")]
    Unsupported { field: String, message: String },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Validation { row: Option<usize>, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    /// A metric has no defined value for the given inputs (e.g. AP without positives).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("checkpoint error{}: {message}", tensor.as_ref().map(|t| format!(" in tensor `{t}`")).unwrap_or_default())]
    Checkpoint {
        tensor: Option<String>,
        message: String,
    },

    #[error("stage `{stage}` failed for `{source_id}`: {source}")]
    Stage {
        stage: &'static str,
        source_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn unsupported(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Unsupported {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Wraps an error with the pipeline stage and recording it came from.
    pub fn in_stage(self, stage: &'static str, source_id: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            source_id: source_id.into(),
            source: Box::new(self),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
