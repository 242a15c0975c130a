//! Binary add/sub/mul where `b` may broadcast along size-1 axes of `a`'s shape.

use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

pub(crate) struct Saved {
    pub kind: BinaryKind,
    pub a: Var,
    pub b: Var,
}

/// For each element of `a_shape`, the flat offset of the matching element of
/// `b_shape`; `None` when shapes are equal (identity mapping).
pub(crate) fn broadcast_offsets(a_shape: &[usize], b_shape: &[usize]) -> Result<Option<Vec<usize>>> {
    if a_shape == b_shape {
        return Ok(None);
    }
    let compatible = a_shape.len() == b_shape.len()
        && a_shape.iter().zip(b_shape).all(|(&da, &db)| db == da || db == 1);
    if !compatible {
        return shape_err(format!("{b_shape:?} neither equals nor broadcasts to {a_shape:?}"));
    }
    let rank = a_shape.len();
    let mut b_strides = vec![0usize; rank];
    let mut stride = 1;
    for ax in (0..rank).rev() {
        b_strides[ax] = if b_shape[ax] == 1 { 0 } else { stride };
        stride *= b_shape[ax];
    }
    let n: usize = a_shape.iter().product();
    let mut offsets = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offsets.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += b_strides[ax];
            if idx[ax] < a_shape[ax] {
                break;
            }
            off -= b_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Ok(Some(offsets))
}

fn apply(kind: BinaryKind, x: f64, y: f64) -> f64 {
    match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
    }
}

impl Graph<'_> {
    pub fn elementwise(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let offsets = broadcast_offsets(av.shape(), bv.shape())?;
        let (ad, bd) = (av.data(), bv.data());
        let data: Vec<f64> = match &offsets {
            None => ad.iter().zip(bd).map(|(&x, &y)| apply(kind, x, y)).collect(),
            Some(off) => ad.iter().zip(off).map(|(&x, &o)| apply(kind, x, bd[o])).collect(),
        };
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.push(value, Op::Elementwise(Saved { kind, a, b })))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Mul, a, b)
    }
}

pub(crate) fn backward(s: &Saved, g: &[f64], sink: &mut GradSink<'_>) {
    let a_shape = sink.value(s.a).shape().to_vec();
    let b_shape = sink.value(s.b).shape().to_vec();
    let offsets = broadcast_offsets(&a_shape, &b_shape).expect("validated in forward");

    // Inputs are cloned only for mul, which needs the other operand.
    let (a_val, b_val) = match s.kind {
        BinaryKind::Mul => (Some(sink.value(s.a).data().to_vec()), Some(sink.value(s.b).data().to_vec())),
        _ => (None, None),
    };
    let b_index = |i: usize| offsets.as_ref().map_or(i, |o| o[i]);

    if let Some(da) = sink.slot(s.a) {
        match s.kind {
            BinaryKind::Add | BinaryKind::Sub => da.iter_mut().zip(g).for_each(|(d, gi)| *d += gi),
            BinaryKind::Mul => {
                let bv = b_val.as_ref().unwrap();
                for (i, d) in da.iter_mut().enumerate() {
                    *d += g[i] * bv[b_index(i)];
                }
            }
        }
    }
    if let Some(db) = sink.slot(s.b) {
        for (i, gi) in g.iter().enumerate() {
            let contrib = match s.kind {
                BinaryKind::Add => *gi,
                BinaryKind::Sub => -gi,
                BinaryKind::Mul => gi * a_val.as_ref().unwrap()[i],
            };
            db[b_index(i)] += contrib;
        }
    }
}
