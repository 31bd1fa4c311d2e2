use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    SymmetryViolation { asymmetry: f64, tolerance: f64 },

    #[error(
        "matrix is not positive semi-definite: eigenvalue {eigenvalue:e} below slack -{slack:e}"
    )]
    PsdViolation { eigenvalue: f64, slack: f64 },

    #[error("non-finite value encountered when evaluating at {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("boundary point {point:?} violates the full-rank condition: d(phi)/d(x2) = 0")]
    SingularBoundaryPoint { point: Vec<f64> },

    #[error("boundary sample is empty inside the requested window")]
    EmptySample,

    #[error("invalid closed set: {0}")]
    InvalidSet(String),

    #[error("degenerate least-squares system: {0}")]
    DegenerateFit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("normal ray inconsistent with the domain: {0}")]
    InconsistentCone(String),

    #[error("structural premise violated: {0}")]
    Premise(String),

    #[error("spec error at {pointer}: {message}")]
    Spec { pointer: String, message: String },
}

impl Error {
    pub(crate) fn spec(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}
