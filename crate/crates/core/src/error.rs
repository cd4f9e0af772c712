use std::fmt;

/// Errors produced by the segmentation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A binary container or text record failed to parse or validate.
    #[error("format error: {0}")]
    Format(String),

    /// Input whose geometry does not match what the operation expects.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    /// Vector math hit a singular case (zero vector, zero mean).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("class {0} is already registered")]
    DuplicateClass(u16),

    #[error("invalid class id {0}: {1}")]
    InvalidClass(u32, &'static str),

    #[error("prototype bank is empty")]
    EmptyBank,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no training data for classes {0:?}")]
    MissingClassData(Vec<u16>),

    #[error("mismatched class sets: {0}")]
    MismatchedClasses(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(msg: impl fmt::Display) -> Self {
        Error::Format(msg.to_string())
    }

    pub(crate) fn dims(expected: impl fmt::Display, found: impl fmt::Display) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
