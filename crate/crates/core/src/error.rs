use std::path::PathBuf;

/// Errors produced anywhere in the denoising pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("header line {line}: {msg}")]
    HeaderParse { line: usize, msg: String },

    #[error("unsupported storage format {0} (only format 212 is supported)")]
    UnsupportedFormat(u32),

    #[error("signal stream truncated at byte offset {offset} (need {needed} bytes)")]
    Truncated { offset: usize, needed: usize },

    #[error("sample {index} of signal {signal} is {value}, outside the 12-bit range")]
    SampleRange { signal: usize, index: usize, value: i32 },

    #[error("annotation stream at byte offset {offset}: {msg}")]
    Annotation { offset: usize, msg: String },

    #[error("{}: not found", path.display())]
    NotFound { path: PathBuf },

    #[error("unsupported sampling rate {0} Hz")]
    UnsupportedRate(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; {diagnostics}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        diagnostics: String,
    },

    #[error("{what} at {}: {source}", path.display())]
    Io {
        what: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Config,
    /// Missing, malformed or inconsistent data.
    Data,
    /// Numerical failure during training or evaluation.
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnsupportedRate(_) => ErrorKind::Config,
            Error::NonFinite { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(what: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path }
        } else {
            Error::Io { what, path, source }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
