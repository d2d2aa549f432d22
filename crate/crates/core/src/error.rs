use thiserror::Error;

#[derive(Debug, Error)]
pub enum MimlError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("label set of cardinality {0} exceeds the cap of {max}", max = crate::label::MAX_BAG_LABELS)]
    LabelCapExceeded(usize),

    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("bag has zero likelihood: {instances} instance(s) cannot cover {labels} label(s)")]
    ZeroLikelihood { instances: usize, labels: usize },

    #[error("empty label set where a bag label is required")]
    EmptyLabelSet,

    #[error("brute-force oracle refused: {0} assignments exceed the guard")]
    OracleGuard(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MimlError>;
