use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single rejected line from a text loader.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("unknown token id {id} (vocabulary size {vocab_size})")]
    Vocabulary { id: usize, vocab_size: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}: malformed input ({} bad line(s)): {}", .errors.len(), first_lines(.errors))]
    Format { path: PathBuf, errors: Vec<LineError> },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint is truncated: {0}")]
    CheckpointTruncated(String),

    #[error("checkpoint checksum mismatch")]
    CheckpointChecksum,

    #[error("checkpoint tensor {name} has shape {found:?}, config requires {expected:?}")]
    CheckpointShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("checkpoint is malformed: {0}")]
    CheckpointMalformed(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn first_lines(errors: &[LineError]) -> String {
    let mut out: Vec<String> = errors.iter().take(3).map(ToString::to_string).collect();
    if errors.len() > 3 {
        out.push("...".to_string());
    }
    out.join("; ")
}
