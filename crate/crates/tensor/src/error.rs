use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid dropout rate {0}, expected 0 <= rate < 1")]
    InvalidRate(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::ShapeMismatch(msg.into()))
}
