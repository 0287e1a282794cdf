use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("frame rate mismatch: {0} Hz vs {1} Hz")]
    FrameRateMismatch(u32, u32),

    #[error("overlapping spans: [{a_start}, {a_end}) and [{b_start}, {b_end})")]
    OverlappingSpans {
        a_start: f64,
        a_end: f64,
        b_start: f64,
        b_end: f64,
    },

    #[error("{path}: row {row}: {message}")]
    Row {
        path: String,
        row: usize,
        message: String,
    },

    #[error("{path}: frame indices are not dense, missing frame {missing}")]
    NonDenseFrames { path: String, missing: usize },

    #[error("malformed JSON at byte offset {offset}: {message}")]
    Json { offset: usize, message: String },

    #[error("schema error in dialog {dialog}: missing or invalid field `{field}`")]
    Schema { dialog: String, field: String },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("LLM exchange failed at decision point {decision} (frame {frame}): {message}")]
    Transport {
        decision: usize,
        frame: usize,
        message: String,
    },

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors that indicate a bug or numerical breakdown rather than bad user data.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
