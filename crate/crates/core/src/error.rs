use std::path::PathBuf;

/// Errors produced anywhere in the stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: usize,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("label {label} at sample {sample} is outside [0, {classes})")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        classes: usize,
    },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward: loss does not depend on any tensor that requires gradients")]
    Detached,

    #[error("backward: graph has already been consumed by a previous backward pass")]
    GraphConsumed,

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("{what}: parse error at byte offset {offset}: {msg}")]
    Parse {
        what: String,
        offset: u64,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: u64, batch: usize, loss: f64 },

    #[error("{k} models exceed the exhaustive enumeration limit of {max}; use sampling mode instead")]
    TooManyModels { k: usize, max: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            offset,
            msg: msg.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Unsupported(_) | Error::TooManyModels { .. } => {
                ErrorClass::Usage
            }
            Error::Parse { .. } | Error::Io { .. } | Error::LabelOutOfRange { .. } => {
                ErrorClass::Data
            }
            Error::NonFiniteLoss { .. } => ErrorClass::Numeric,
            Error::Dimension { .. }
            | Error::Shape { .. }
            | Error::NotScalar(_)
            | Error::Detached
            | Error::GraphConsumed
            | Error::MissingGrad(_) => ErrorClass::Numeric,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
