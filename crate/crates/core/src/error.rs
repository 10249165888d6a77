use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("alignment error in {what}: expected {expected} frames, got {got}")]
    Alignment {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{samples} samples is shorter than one 400-sample analysis window")]
    EmptyGrid { samples: usize },

    #[error("unsupported sample rate {got} Hz (expected {expected} Hz, resample first)")]
    SampleRate { expected: u32, got: u32 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("curation error: no windows of class `{missing}`")]
    Curation { missing: &'static str },

    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: u64 },

    #[error("format error in {file}: {reason}")]
    Format { file: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn format(file: impl ToString, reason: impl ToString) -> Self {
        Error::Format {
            file: file.to_string(),
            reason: reason.to_string(),
        }
    }
}
