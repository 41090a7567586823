use thiserror::Error;

/// Errors raised by the distillation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("empty batch: {0} requires at least one row")]
    EmptyBatch(&'static str),

    #[error("label {label} at row {row} is outside [0, {classes})")]
    Label {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: header mismatch: {message}")]
    Header { path: String, message: String },

    #[error("{path}: line {line}: label {label} out of range for {classes} classes")]
    LabelRange {
        path: String,
        line: usize,
        label: usize,
        classes: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("oracle evaluation failed: {0}")]
    Oracle(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
