use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::graph::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    /// Frozen parameters get no optimizer update and stay out of gradient-norm reports.
    pub trainable: bool,
}

/// Owns every learnable tensor of a model, addressed by id or dotted name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad: None, trainable: true });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = Some(Tensor::zeros(p.value.shape().to_vec()));
        }
    }

    pub fn clear_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Replaces all gradients with those from a backward pass. Parameters the
    /// pass never reached end up with zero gradient.
    pub fn load_grads(&mut self, grads: &Gradients) {
        self.zero_grad();
        for (id, g) in grads.param_grads() {
            let slot = self.params[id.0].grad.as_mut().expect("zeroed above");
            for (s, v) in slot.data_mut().iter_mut().zip(g) {
                *s += v;
            }
        }
    }

    /// L2 norm over trainable parameters' gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
