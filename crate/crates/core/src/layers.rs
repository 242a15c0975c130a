//! Parameterised building blocks shared by the attention modules and the backbone.

use drifa_tensor::{Graph, Padding, ParamId, ParamStore, RandomStream, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Uniform fan-in scaled init, U(-sqrt(6/fan_in), sqrt(6/fan_in)).
pub fn he_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut RandomStream) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// K×K convolution with per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub channels_out: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        channels_in: usize,
        channels_out: usize,
        stride: usize,
        rng: &mut RandomStream,
    ) -> Result<Self> {
        let w = he_uniform(vec![kernel, kernel, channels_in, channels_out], kernel * kernel * channels_in, rng);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![channels_out]))?;
        Ok(Self { weight, bias, stride, channels_out })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.conv2d(x, w, self.stride, Padding::Same)?;
        let b = g.param(self.bias);
        let b = g.reshape(b, vec![1, 1, 1, self.channels_out])?;
        Ok(g.add(y, b)?)
    }
}

/// Fully connected layer, `x·W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut RandomStream) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), he_uniform(vec![inputs, outputs], inputs, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs]))?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        Ok(g.fully_connected(x, w, b)?)
    }
}

/// A learnable weight that, when disabled, behaves as the constant 1 and
/// stays out of the graph entirely.
#[derive(Clone, Debug)]
pub struct Modulation {
    pub id: ParamId,
    pub enabled: bool,
}

impl Modulation {
    pub fn new(store: &mut ParamStore, name: &str, len: usize, enabled: bool) -> Result<Self> {
        let id = store.add(name, Tensor::ones(vec![len]))?;
        store.set_trainable(id, enabled);
        Ok(Self { id, enabled })
    }

    /// `x ⊗ ω`, with ω reshaped to `broadcast_shape` (x's rank, size-1 axes).
    pub fn apply(&self, g: &mut Graph, x: Var, broadcast_shape: Vec<usize>) -> Result<Var> {
        if !self.enabled {
            return Ok(x);
        }
        let w = g.param(self.id);
        let w = g.reshape(w, broadcast_shape)?;
        Ok(g.mul(x, w)?)
    }
}
