use thiserror::Error;

/// Errors produced by the geometry, loss, parsing and evaluation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-positive depth: {0}")]
    NonPositiveDepth(f64),

    #[error("projection matrix left 3x3 block is singular")]
    SingularProjection,

    #[error("invalid projection matrix: {0}")]
    InvalidProjection(String),

    #[error("non-positive focal length: {0}")]
    NonPositiveFocal(f64),

    #[error("degenerate yaw encoding: sin and cos are both zero")]
    DegenerateEncoding,

    #[error("invalid distance factor `{name}`: {value}")]
    InvalidFactor { name: &'static str, value: f64 },

    #[error("invalid size `{name}`: {value}")]
    InvalidSize { name: &'static str, value: f64 },

    #[error("invalid 2D box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox2D { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("non-positive sigma: {0}")]
    NonPositiveSigma(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate proposal: zero width or height")]
    DegenerateProposal,

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("line {line}: expected 15 or 16 fields, found {count}")]
    FieldCount { line: usize, count: usize },

    #[error("line {line}: cannot parse field `{field}` from {token:?}")]
    NumericParse {
        line: usize,
        field: &'static str,
        token: String,
    },

    #[error("line {line}: field `{field}` out of range: {reason}")]
    FieldRange {
        line: usize,
        field: &'static str,
        reason: String,
    },

    #[error("input is not valid UTF-8 (byte offset {0})")]
    InvalidUtf8(usize),

    #[error("missing key `{0}`")]
    MissingKey(String),

    #[error("no ground-truth objects for the requested difficulty; AP is undefined")]
    EmptyGroundTruth,

    #[error("degenerate sequence: {0}")]
    DegenerateSequence(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("optimizer diverged after {steps} steps")]
    Divergence { steps: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// 1-based input line for parse errors.
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::FieldCount { line, .. }
            | Error::NumericParse { line, .. }
            | Error::FieldRange { line, .. } => Some(*line),
            _ => None,
        }
    }
}
