//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records every op applied to its [`Var`] handles. Nodes are
//! appended in creation order, so the tape is already a topological order and
//! backward is a single reverse sweep that visits each node once.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::ops::{activation, conv, dropout, elementwise, linear, loss, pool, shape};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Reshape,
    Sum,
    Mean,
    Conv2d,
    FullyConnected,
    GlobalPool,
    LocalPool,
    Sigmoid,
    Relu,
    Softmax,
    Concat,
    Slice,
    Dropout,
    CrossEntropy,
}

pub(crate) enum Op {
    Leaf,
    Elementwise(elementwise::Saved),
    Scale { x: Var, k: f64 },
    Reshape { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Conv2d(conv::Saved),
    FullyConnected { x: Var, w: Var, b: Var },
    GlobalPool(pool::GlobalSaved),
    LocalPool(pool::LocalSaved),
    Sigmoid { x: Var },
    Relu { x: Var },
    Softmax { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy(loss::Saved),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Elementwise(s) => match s.kind {
                elementwise::BinaryKind::Add => OpKind::Add,
                elementwise::BinaryKind::Sub => OpKind::Sub,
                elementwise::BinaryKind::Mul => OpKind::Mul,
            },
            Op::Scale { .. } => OpKind::Scale,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Conv2d(_) => OpKind::Conv2d,
            Op::FullyConnected { .. } => OpKind::FullyConnected,
            Op::GlobalPool(_) => OpKind::GlobalPool,
            Op::LocalPool(_) => OpKind::LocalPool,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Relu { .. } => OpKind::Relu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::CrossEntropy(_) => OpKind::CrossEntropy,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Elementwise(s) => vec![s.a, s.b],
            Op::Scale { x, .. }
            | Op::Reshape { x }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::Sigmoid { x }
            | Op::Relu { x }
            | Op::Softmax { x, .. }
            | Op::Slice { x, .. }
            | Op::Dropout { x, .. } => vec![*x],
            Op::Conv2d(s) => vec![s.x, s.w],
            Op::FullyConnected { x, w, b } => vec![*x, *w, *b],
            Op::GlobalPool(s) => vec![s.x],
            Op::LocalPool(s) => vec![s.x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::CrossEntropy(s) => vec![s.logits],
        }
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
    pub param: Option<ParamId>,
}

/// Write access to the gradient accumulators of a backward sweep.
pub(crate) struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    /// Accumulator for `v`, or `None` when `v` does not need a gradient.
    pub fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` is not on a
    /// path that requires gradients or does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.grads[node].as_deref().map(|g| (id, g)))
    }
}

pub struct Graph<'p> {
    pub(crate) nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: None, param_vars: HashMap::new(), consumed: false }
    }

    /// A graph that can pull leaves from `store` via [`Graph::param`].
    pub fn with_params(store: &'p ParamStore) -> Self {
        Self { params: Some(store), ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that does not take gradients (data, labels, masks).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// Leaf that collects a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, None)
    }

    /// Leaf holding the current value of a stored parameter. Repeated calls
    /// with the same id return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("Graph::param requires Graph::with_params");
        let value = store.value(id).clone();
        let v = self.push_leaf(value, true, Some(id));
        self.param_vars.insert(id, v);
        v
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, param });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(
            value.is_finite() || op.inputs().iter().any(|v| !self.nodes[v.0].value.is_finite()),
            "{:?} produced non-finite output from finite inputs",
            op.kind()
        );
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Back-propagates from a scalar `loss`. A graph supports one backward
    /// pass; build a fresh graph (rerun forward) for the next one.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !matches!(node.op, Op::Leaf) {
                let mut sink = GradSink { nodes: &self.nodes, grads: &mut grads };
                backward_op(&node.op, &node.value, &g, &mut sink);
            }
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (id, i)))
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn backward_op(op: &Op, out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    match op {
        Op::Leaf => {}
        Op::Elementwise(s) => elementwise::backward(s, g, sink),
        Op::Scale { x, k } => {
            if let Some(dx) = sink.slot(*x) {
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += k * gi;
                }
            }
        }
        Op::Reshape { x } => {
            if let Some(dx) = sink.slot(*x) {
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
        Op::Sum { x } => {
            if let Some(dx) = sink.slot(*x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean { x } => {
            if let Some(dx) = sink.slot(*x) {
                let k = g[0] / dx.len() as f64;
                dx.iter_mut().for_each(|d| *d += k);
            }
        }
        Op::Conv2d(s) => conv::backward(s, g, sink),
        Op::FullyConnected { x, w, b } => linear::backward(*x, *w, *b, g, sink),
        Op::GlobalPool(s) => pool::global_backward(s, g, sink),
        Op::LocalPool(s) => pool::local_backward(s, g, sink),
        Op::Sigmoid { x } => activation::sigmoid_backward(*x, out, g, sink),
        Op::Relu { x } => activation::relu_backward(*x, g, sink),
        Op::Softmax { x, axis } => activation::softmax_backward(*x, *axis, out, g, sink),
        Op::Concat { xs, axis } => shape::concat_backward(xs, *axis, out.shape(), g, sink),
        Op::Slice { x, axis, start } => shape::slice_backward(*x, *axis, *start, out.shape(), g, sink),
        Op::Dropout { x, mask } => dropout::backward(*x, mask, g, sink),
        Op::CrossEntropy(s) => loss::backward(s, g, sink),
    }
}
