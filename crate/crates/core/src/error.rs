use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("training population has an empty {0} class")]
    EmptyClass(&'static str),

    #[error("non-finite coordinate {value} at index {index}")]
    NonFiniteCoordinate { index: usize, value: f64 },

    #[error("class means coincide (|mu_p - mu_n| = {0:e})")]
    DegenerateMeans(f64),

    #[error("need at least {required} samples per class, found {found}")]
    InsufficientSamples { required: usize, found: usize },

    #[error("objective is not finite: {0}")]
    NonFiniteLoss(String),

    #[error("indicator rates cannot separate classes (|P - N| = {0:e})")]
    DegenerateSeparation(f64),

    #[error("monotonicity constraint not satisfied: max violation {violation:e}")]
    ConstraintNotSatisfied { violation: f64 },

    #[error("level-set family is not monotone: {0}")]
    NonMonotoneFamily(String),

    #[error("both densities are zero")]
    BothZero,

    #[error("local accuracy is indeterminate (q = {q}, q_point = {q_point})")]
    IndeterminateAccuracy { q: f64, q_point: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown label value {value:?} at row {row}")]
    UnknownLabelValue { row: usize, value: String },

    #[error("unsupported dimension {0} (operation requires m = 2)")]
    UnsupportedDimension(usize),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable name of the error variant, used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyClass(_) => "EmptyClass",
            Error::NonFiniteCoordinate { .. } => "NonFiniteCoordinate",
            Error::DegenerateMeans(_) => "DegenerateMeans",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::NonFiniteLoss(_) => "NonFiniteLoss",
            Error::DegenerateSeparation(_) => "DegenerateSeparation",
            Error::ConstraintNotSatisfied { .. } => "ConstraintNotSatisfied",
            Error::NonMonotoneFamily(_) => "NonMonotoneFamily",
            Error::BothZero => "BothZero",
            Error::IndeterminateAccuracy { .. } => "IndeterminateAccuracy",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Parse { .. } => "ParseError",
            Error::UnknownLabelValue { .. } => "UnknownLabelValue",
            Error::UnsupportedDimension(_) => "UnsupportedDimension",
            Error::ModelFormat(_) => "ModelFormat",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
