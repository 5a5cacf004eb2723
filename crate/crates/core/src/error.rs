use alloc::string::String;

/// Errors raised by the numeric engine, the model and the task protocols.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value encountered in {0}")]
    NumericDomain(&'static str),

    #[error("missing gradient for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds context size {n_ctx}")]
    SequenceTooLong { len: usize, n_ctx: usize },

    #[error("series has {len} steps but the window needs {window}")]
    SeriesTooShort { len: usize, window: usize },

    #[error("labels are required for this task")]
    MissingLabels,

    #[error("adapters are already inserted")]
    AdaptersPresent,

    #[error("adapters have not been inserted")]
    AdaptersMissing,

    #[error("mask selects no entries")]
    EmptyMask,

    #[error("empty sample")]
    EmptySample,

    #[error("mask ratio {0} outside (0, 1)")]
    InvalidRatio(f64),

    #[error("invalid anomaly spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("dataset has {rows} rows, need at least {min}")]
    DatasetTooSmall { rows: usize, min: usize },

    #[error("column {0} has zero variance")]
    ZeroVariance(usize),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}
