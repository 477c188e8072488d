use thiserror::Error;

/// Errors raised by the toolkit. Absence of a projection or a skipped label
/// is expressed with `Option`/reports, not with this type.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration or domain value violates its stated invariant.
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    /// Two inputs that must agree on shape do not.
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// A point cloud was handed to an operation expecting another frame.
    #[error("point cloud frame mismatch: expected {expected}, got {actual}")]
    FrameMismatch { expected: String, actual: String },

    /// Scene placement gave up.
    #[error("could not place box {index} without overlap after {attempts} attempts")]
    Placement { index: usize, attempts: usize },

    /// A pipeline stage failed; carries the stage name.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("json error: {0}")]
    Json(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// Wraps the error with the name of the stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than internal faults.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid { .. } | Error::Json(_) | Error::Placement { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
