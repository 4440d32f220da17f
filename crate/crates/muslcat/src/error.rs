use std::path::PathBuf;

/// Crate-wide error type. Variants carry enough context to be actionable
/// from the CLI without a backtrace.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or extent mismatch. The message names the offending shapes.
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    /// NaN or Inf where a finite value is required.
    #[error("{op}: non-finite value: {msg}")]
    NonFinite { op: &'static str, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {msg} (byte offset {offset})")]
    Wav {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("audio: {0}")]
    Audio(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("train: {0}")]
    Train(String),

    #[error("gradcheck: {0}")]
    Gradcheck(String),

    #[error("evaluate: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    pub fn non_finite(op: &'static str, msg: impl Into<String>) -> Self {
        Error::NonFinite {
            op,
            msg: msg.into(),
        }
    }

    /// True when the error indicates bad user input (config, arguments,
    /// malformed files) rather than a runtime failure. The CLI maps these
    /// to exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::Config(_)
                | Error::Wav { .. }
                | Error::Manifest(_)
                | Error::Checkpoint(_)
        )
    }
}
