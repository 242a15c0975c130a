use drifa_core::CoreError;
use drifa_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(CoreError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig(_)
            | CoreError::ConfigMismatch(_)
            | CoreError::WeightCountMismatch { .. }
            | CoreError::InvalidTaskOrClass { .. }
            | CoreError::TooFewModalities(_)
            | CoreError::BadFractions(_)
            | CoreError::InvalidSpec(_) => CliError::Config(e.to_string()),
            CoreError::Dataset(_) | CoreError::Io(_) | CoreError::NonSquareRotation { .. } => CliError::Data(e.to_string()),
            CoreError::Tensor(t) => t.into(),
            other => CliError::Core(other),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::CheckpointCorrupt(_) | TensorError::UnknownParameter(_) => CliError::Checkpoint(e.to_string()),
            TensorError::Io(io) => CliError::Io(io),
            other => CliError::Core(CoreError::Tensor(other)),
        }
    }
}
