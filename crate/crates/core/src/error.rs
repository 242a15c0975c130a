use drifa_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{got} task weights for {expected} tasks")]
    WeightCountMismatch { expected: usize, got: usize },
    #[error("task {task} / class {class} out of range")]
    InvalidTaskOrClass { task: usize, class: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("rotate90 needs square images, got {height}x{width}")]
    NonSquareRotation { height: usize, width: usize },
    #[error("split fractions {0:?} must be non-negative and sum to 1")]
    BadFractions([f64; 3]),
    #[error("MIFA needs at least two modalities, got {0}")]
    TooFewModalities(usize),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
