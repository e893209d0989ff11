use thiserror::Error;

/// Errors produced anywhere in the core library.
///
/// Each variant carries a stable machine-parseable code (see [`Error::code`])
/// so CLI consumers can match on failures without parsing messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {detail}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },

    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("dataset record {id:?} (line {line}): {reason}")]
    InvalidRecord {
        line: usize,
        id: String,
        reason: String,
    },

    #[error("configuration invalid:\n{}", issues.join("\n"))]
    Config { issues: Vec<String> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite gradient in parameter {param:?}")]
    NonFiniteGradient { param: String },

    #[error("split {split:?} is empty")]
    EmptySplit { split: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable diagnostic code for machine consumption.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "X2D001",
            Error::BadShape { .. } => "X2D002",
            Error::Domain { .. } => "X2D003",
            Error::NonScalarRoot { .. } => "X2D004",
            Error::InvalidRecord { .. } => "X2D010",
            Error::Config { .. } => "X2D011",
            Error::Checkpoint(_) => "X2D012",
            Error::NonFiniteGradient { .. } => "X2D013",
            Error::EmptySplit { .. } => "X2D014",
            Error::Io(_) => "X2D020",
            Error::Json(_) => "X2D021",
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(issues: Vec<String>) -> Self {
        Error::Config { issues }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
