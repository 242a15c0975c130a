//! Global and local (windowed) avg/max/min pooling over N×H×W×C maps.
//!
//! Local pooling uses same padding where out-of-bounds cells are absent: avg
//! divides by the number of in-bounds cells, max/min ignore them. Max/min
//! backward routes the gradient to the first extremal cell in row-major order.

use crate::error::{shape_err, Result, TensorError};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Avg,
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolScope {
    Global,
    Local,
}

pub(crate) struct GlobalSaved {
    pub x: Var,
    kind: PoolKind,
    /// Source offset per output element (max/min only).
    arg: Vec<usize>,
}

#[derive(Clone, Copy)]
struct Window {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Window {
    fn rows(&self, oy: usize) -> std::ops::Range<usize> {
        let lo = (oy * self.stride) as isize - self.pad_top as isize;
        let hi = lo + self.k as isize;
        lo.max(0) as usize..hi.min(self.h as isize) as usize
    }

    fn cols(&self, ox: usize) -> std::ops::Range<usize> {
        let lo = (ox * self.stride) as isize - self.pad_left as isize;
        let hi = lo + self.k as isize;
        lo.max(0) as usize..hi.min(self.w as isize) as usize
    }
}

pub(crate) struct LocalSaved {
    pub x: Var,
    kind: PoolKind,
    win: Window,
    arg: Vec<usize>,
}

fn nhwc(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => shape_err(format!("pooling expects an N×H×W×C map, got {shape:?}")),
    }
}

fn better(kind: PoolKind, candidate: f64, best: f64) -> bool {
    match kind {
        PoolKind::Max => candidate > best,
        PoolKind::Min => candidate < best,
        PoolKind::Avg => unreachable!(),
    }
}

impl Graph<'_> {
    pub fn pool(&mut self, kind: PoolKind, scope: PoolScope, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        match scope {
            PoolScope::Global => self.global_pool(kind, x),
            PoolScope::Local => self.local_pool(kind, x, kernel, stride),
        }
    }

    /// Collapses H×W to 1×1 per channel.
    pub fn global_pool(&mut self, kind: PoolKind, x: Var) -> Result<Var> {
        let (n, h, w, c) = nhwc(self.shape(x))?;
        let xd = self.value(x).data();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * c);
        let mut arg = Vec::new();
        for b in 0..n {
            for ch in 0..c {
                let at = |p: usize| (b * hw + p) * c + ch;
                match kind {
                    PoolKind::Avg => {
                        out.push((0..hw).map(|p| xd[at(p)]).sum::<f64>() / hw as f64);
                    }
                    PoolKind::Max | PoolKind::Min => {
                        let mut best = at(0);
                        for p in 1..hw {
                            if better(kind, xd[at(p)], xd[best]) {
                                best = at(p);
                            }
                        }
                        out.push(xd[best]);
                        arg.push(best);
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![n, 1, 1, c], out);
        Ok(self.push(value, Op::GlobalPool(GlobalSaved { x, kind, arg })))
    }

    /// Sliding-window pooling with same padding; stride 1 keeps H×W.
    pub fn local_pool(&mut self, kind: PoolKind, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (n, h, w, c) = nhwc(self.shape(x))?;
        if kernel == 0 || stride == 0 {
            return Err(TensorError::InvalidArgument("pool kernel and stride must be positive".into()));
        }
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let pad_top = ((oh - 1) * stride + kernel).saturating_sub(h) / 2;
        let pad_left = ((ow - 1) * stride + kernel).saturating_sub(w) / 2;
        let win = Window { n, h, w, c, k: kernel, stride, oh, ow, pad_top, pad_left };
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut arg = Vec::new();
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let at = |y: usize, x: usize| ((b * h + y) * w + x) * c + ch;
                        match kind {
                            PoolKind::Avg => {
                                let mut sum = 0.0;
                                let mut count = 0usize;
                                for y in win.rows(oy) {
                                    for x in win.cols(ox) {
                                        sum += xd[at(y, x)];
                                        count += 1;
                                    }
                                }
                                out.push(sum / count as f64);
                            }
                            PoolKind::Max | PoolKind::Min => {
                                let mut best: Option<usize> = None;
                                for y in win.rows(oy) {
                                    for x in win.cols(ox) {
                                        let o = at(y, x);
                                        if best.is_none_or(|bo| better(kind, xd[o], xd[bo])) {
                                            best = Some(o);
                                        }
                                    }
                                }
                                let best = best.expect("same padding leaves every window non-empty");
                                out.push(xd[best]);
                                arg.push(best);
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![n, oh, ow, c], out);
        Ok(self.push(value, Op::LocalPool(LocalSaved { x, kind, win, arg })))
    }
}

pub(crate) fn global_backward(s: &GlobalSaved, g: &[f64], sink: &mut GradSink<'_>) {
    let shape = sink.value(s.x).shape().to_vec();
    let Some(dx) = sink.slot(s.x) else { return };
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    match s.kind {
        PoolKind::Avg => {
            let hw = h * w;
            for b in 0..n {
                for p in 0..hw {
                    for ch in 0..c {
                        dx[(b * hw + p) * c + ch] += g[b * c + ch] / hw as f64;
                    }
                }
            }
        }
        PoolKind::Max | PoolKind::Min => {
            for (&src, gi) in s.arg.iter().zip(g) {
                dx[src] += gi;
            }
        }
    }
}

pub(crate) fn local_backward(s: &LocalSaved, g: &[f64], sink: &mut GradSink<'_>) {
    let Some(dx) = sink.slot(s.x) else { return };
    match s.kind {
        PoolKind::Max | PoolKind::Min => {
            for (&src, gi) in s.arg.iter().zip(g) {
                dx[src] += gi;
            }
        }
        PoolKind::Avg => {
            let win = s.win;
            let mut gi = g.iter();
            for b in 0..win.n {
                for oy in 0..win.oh {
                    for ox in 0..win.ow {
                        let count = (win.rows(oy).len() * win.cols(ox).len()) as f64;
                        for ch in 0..win.c {
                            let share = gi.next().unwrap() / count;
                            for y in win.rows(oy) {
                                for x in win.cols(ox) {
                                    dx[((b * win.h + y) * win.w + x) * win.c + ch] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pooled(kind: PoolKind, scope: PoolScope, x: Tensor) -> Tensor {
        let mut g = Graph::new();
        let v = g.constant(x);
        let y = g.pool(kind, scope, v, 3, 1).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn global_avg_of_small_grid() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pooled(PoolKind::Avg, PoolScope::Global, x);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn global_min_of_constant() {
        let y = pooled(PoolKind::Min, PoolScope::Global, Tensor::full(vec![2, 3, 3, 2], -1.25));
        assert!(y.data().iter().all(|&v| v == -1.25));
    }

    #[test]
    fn local_max_on_ramp_matches_window_oracle() {
        let x = Tensor::from_fn(vec![1, 4, 4, 1], |i| (i[1] * 4 + i[2]) as f64);
        let y = pooled(PoolKind::Max, PoolScope::Local, x.clone());
        for r in 0..4usize {
            for c in 0..4usize {
                let mut best = f64::NEG_INFINITY;
                for dr in -1i32..=1 {
                    for dc in -1i32..=1 {
                        let (rr, cc) = (r as i32 + dr, c as i32 + dc);
                        if (0..4).contains(&rr) && (0..4).contains(&cc) {
                            best = best.max(x.get(&[0, rr as usize, cc as usize, 0]));
                        }
                    }
                }
                assert_eq!(y.get(&[0, r, c, 0]), best);
            }
        }
    }

    #[test]
    fn local_avg_ignores_out_of_bounds() {
        let y = pooled(PoolKind::Avg, PoolScope::Local, Tensor::full(vec![1, 3, 3, 2], 0.75));
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn max_tie_routes_gradient_to_first_index() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::full(vec![1, 2, 2, 1], 1.0));
        let y = g.global_pool(PoolKind::Max, x).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_non_map_input() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2, 3]));
        assert!(g.global_pool(PoolKind::Avg, x).is_err());
    }
}
