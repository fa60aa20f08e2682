//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input file failed to parse or violated a structural invariant.
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Transport-level client failure after the retry budget was exhausted.
    #[error("transport error after {attempts} attempt(s): {reason}")]
    Transport { attempts: u32, reason: String },

    /// The remote replied with a non-success status.
    #[error("protocol error (status {status}): {body}")]
    Protocol { status: u16, body: String },

    /// A model reply could not be parsed into the required structure.
    #[error("reply parse error: {0}")]
    ReplyParse(String),

    /// Distillation failed for one sample after all repair attempts.
    #[error("distillation failed for {question_id}: {reason}")]
    Distill { question_id: String, reason: String },

    /// Cluster summarization failed after all repair attempts.
    #[error("summarization failed: {0}")]
    Summarize(String),

    /// Nothing found at the requested retrieval levels.
    #[error("not found: {0}")]
    NotFound(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }
}
