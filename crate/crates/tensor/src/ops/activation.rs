use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    Sigmoid,
    Relu,
    Softmax,
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// (outer, axis_len, inner) strides for reducing along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph<'_> {
    pub fn activation(&mut self, kind: ActivationKind, x: Var, axis: Option<usize>) -> Result<Var> {
        match kind {
            ActivationKind::Sigmoid => Ok(self.sigmoid(x)),
            ActivationKind::Relu => Ok(self.relu(x)),
            ActivationKind::Softmax => match axis {
                Some(axis) => self.softmax(x, axis),
                None => Err(crate::TensorError::InvalidArgument("softmax requires an axis".into())),
            },
        }
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&t| sigmoid_scalar(t)).collect();
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(value, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&t| t.max(0.0)).collect();
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(value, Op::Relu { x })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() {
            return shape_err(format!("softmax axis {axis} out of range for {:?}", v.shape()));
        }
        let (outer, len, inner) = axis_split(v.shape(), axis);
        let xd = v.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| xd[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (xd[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        let value = Tensor::from_parts(v.shape().to_vec(), out);
        Ok(self.push(value, Op::Softmax { x, axis }))
    }
}

pub(crate) fn sigmoid_backward(x: Var, out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    if let Some(dx) = sink.slot(x) {
        for ((d, &y), gi) in dx.iter_mut().zip(out.data()).zip(g) {
            *d += gi * y * (1.0 - y);
        }
    }
}

pub(crate) fn relu_backward(x: Var, g: &[f64], sink: &mut GradSink<'_>) {
    let xd = sink.value(x).data().to_vec();
    if let Some(dx) = sink.slot(x) {
        for ((d, &xv), gi) in dx.iter_mut().zip(&xd).zip(g) {
            if xv > 0.0 {
                *d += gi;
            }
        }
    }
}

pub(crate) fn softmax_backward(x: Var, axis: usize, out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    let (outer, len, inner) = axis_split(out.shape(), axis);
    let y = out.data();
    if let Some(dx) = sink.slot(x) {
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                for k in 0..len {
                    dx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                }
            }
        }
    }
}
