use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid register layout: {0}")]
    InvalidLayout(String),

    #[error("could not place {placed} of {requested} vortices with separation {min_separation} after {attempts} attempts")]
    PlacementFailure {
        requested: usize,
        placed: usize,
        min_separation: f64,
        attempts: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("grid {width}x{height} does not fit a layout with {x_bits}+{y_bits} position qubits")]
    GridTooLarge {
        width: usize,
        height: usize,
        x_bits: usize,
        y_bits: usize,
    },

    #[error("field is identically zero and cannot be amplitude encoded")]
    EmptyField,

    #[error("projection has zero success probability")]
    ProjectionEmpty,

    #[error("window of side {window} does not fit in a {width}x{height} field")]
    WindowTooLarge {
        window: usize,
        width: usize,
        height: usize,
    },

    #[error("order is not a bijection on [0, {0})")]
    NotABijection(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("class {label} has {have} members, need at least {need}")]
    InsufficientClassMembers { label: u8, have: usize, need: usize },

    #[error("measurement budget {budget} is not divisible by {shots} shots")]
    BudgetNotDivisible { budget: u64, shots: u64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
