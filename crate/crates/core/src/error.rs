use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row {row}: missing value in column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("row {row}: treatment not binary (got {value})")]
    TreatmentNotBinary { row: usize, value: f64 },

    #[error("row {row}: outcome {value} outside declared range [{min}, {max}]")]
    OutcomeOutOfRange {
        row: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("row {row}: mediator {mediator} value {value} is not in its declared support")]
    MediatorOutOfSupport {
        row: usize,
        mediator: usize,
        value: f64,
    },

    #[error("invalid mediator support: {0}")]
    InvalidSupport(String),

    #[error("invalid outcome bounds: y_min ({min}) must be strictly below y_max ({max})")]
    InvalidBounds { min: f64, max: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid learner specification: {0}")]
    InvalidSpec(String),

    #[error("all regression weights are zero")]
    ZeroWeights,

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("ratio ill-defined near zero denominator ({0:e})")]
    RatioIllDefined(f64),

    #[error("joint mediator support has {cells} cells, above the cap of {cap}; use coarser bins")]
    CellCapExceeded { cells: usize, cap: usize },

    #[error("expected {expected} mediators, found {found}")]
    MediatorCount { expected: usize, found: usize },

    #[error("saturated nuisance estimate undefined: {0}")]
    EmptyCell(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("CSV row {row}, column '{column}': {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
