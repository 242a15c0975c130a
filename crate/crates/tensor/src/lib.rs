//! Minimal N-D tensor engine with reverse-mode automatic differentiation.
//!
//! Values are `f64` row-major arrays; feature maps use N×H×W×C. Build a
//! [`Graph`] per forward pass, call [`Graph::backward`] once on a scalar loss,
//! then hand the [`Gradients`] to a [`ParamStore`] and step an optimizer.

pub mod checkpoint;
mod error;
mod graph;
pub mod ops;
pub mod optim;
mod param;
pub mod random;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use ops::activation::{sigmoid_scalar, ActivationKind};
pub use ops::conv::Padding;
pub use ops::elementwise::BinaryKind;
pub use ops::pool::{PoolKind, PoolScope};
pub use optim::{Adam, PlateauScheduler};
pub use param::{ParamId, ParamStore, Parameter};
pub use random::{derive_stream, stream, RandomStream};
pub use tensor::Tensor;
