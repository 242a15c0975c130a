use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::tensor::Tensor;

impl Graph<'_> {
    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x);
        let value = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|t| t * k).collect());
        self.push(value, Op::Scale { x, k })
    }

    /// Sum of all elements, as a 1-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let total = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(total), Op::Mean { x })
    }

    /// Expands `x` along its size-1 axes to `shape`.
    pub fn broadcast_to(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let zeros = self.constant(Tensor::zeros(shape));
        self.add(zeros, x)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat of an empty list");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err(format!("concat axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let agrees = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(ax, (a, b))| ax == axis || a == b);
            if !agrees {
                return shape_err(format!("cannot concat {s:?} with {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                let d = self.value(x).data();
                data.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::from_parts(shape, data);
        Ok(self.push(value, Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return shape_err(format!("slice {start}..{} on axis {axis} of {shape:?}", start + len));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let d = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let at = (o * full + start) * inner;
            data.extend_from_slice(&d[at..at + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::from_parts(out_shape, data);
        Ok(self.push(value, Op::Slice { x, axis, start }))
    }

    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice(x, axis, start, len)?);
            start += len;
        }
        if start != self.shape(x).get(axis).copied().unwrap_or(0) {
            return shape_err(format!("split sizes {sizes:?} do not cover axis {axis}"));
        }
        Ok(out)
    }
}

pub(crate) fn concat_backward(xs: &[Var], axis: usize, out_shape: &[usize], g: &[f64], sink: &mut GradSink<'_>) {
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let total = out_shape[axis];
    let mut start = 0;
    for &x in xs {
        let len = sink.value(x).shape()[axis];
        if let Some(dx) = sink.slot(x) {
            for o in 0..outer {
                let src = (o * total + start) * inner;
                let dst = o * len * inner;
                for (d, gi) in dx[dst..dst + len * inner].iter_mut().zip(&g[src..src + len * inner]) {
                    *d += gi;
                }
            }
        }
        start += len;
    }
}

pub(crate) fn slice_backward(x: Var, axis: usize, start: usize, out_shape: &[usize], g: &[f64], sink: &mut GradSink<'_>) {
    let full = sink.value(x).shape()[axis];
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let len = out_shape[axis];
    if let Some(dx) = sink.slot(x) {
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            let src = o * len * inner;
            for (d, gi) in dx[dst..dst + len * inner].iter_mut().zip(&g[src..src + len * inner]) {
                *d += gi;
            }
        }
    }
}
