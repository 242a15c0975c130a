use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::random::RandomStream;
use crate::tensor::Tensor;

impl Graph<'_> {
    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Outside training, and at rate 0, this is the identity.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RandomStream, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let v = self.value(x);
        let mask: Vec<f64> = (0..v.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        Ok(self.push(value, Op::Dropout { x, mask }))
    }
}

pub(crate) fn backward(x: Var, mask: &[f64], g: &[f64], sink: &mut GradSink<'_>) {
    if let Some(dx) = sink.slot(x) {
        for ((d, m), gi) in dx.iter_mut().zip(mask).zip(g) {
            *d += m * gi;
        }
    }
}
