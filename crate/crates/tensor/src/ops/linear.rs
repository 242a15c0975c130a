use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::tensor::Tensor;

impl Graph<'_> {
    /// `y = x·W + b` for `x` of shape N×F_in, `W` F_in×F_out, `b` F_out.
    pub fn fully_connected(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 {
            return shape_err(format!("fully_connected expects N×F input and F×F weight, got {xs:?}, {ws:?}"));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[1]);
        if ws[0] != fin {
            return shape_err(format!("weight expects {} inputs, got {fin}", ws[0]));
        }
        if bs.iter().product::<usize>() != fout {
            return shape_err(format!("bias {bs:?} does not match {fout} outputs"));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let mut out = Vec::with_capacity(n * fout);
        for row in xd.chunks_exact(fin) {
            let mut acc = bd.to_vec();
            for (i, &xv) in row.iter().enumerate() {
                for (a, &wv) in acc.iter_mut().zip(&wd[i * fout..(i + 1) * fout]) {
                    *a += xv * wv;
                }
            }
            out.extend_from_slice(&acc);
        }
        let value = Tensor::from_parts(vec![n, fout], out);
        Ok(self.push(value, Op::FullyConnected { x, w: weight, b: bias }))
    }
}

pub(crate) fn backward(x: Var, w: Var, b: Var, g: &[f64], sink: &mut GradSink<'_>) {
    let fin = sink.value(x).shape()[1];
    let fout = sink.value(w).shape()[1];
    if sink.slot(x).is_some() {
        let wd = sink.value(w).data().to_vec();
        let dx = sink.slot(x).unwrap();
        for (grow, dxrow) in g.chunks_exact(fout).zip(dx.chunks_exact_mut(fin)) {
            for (i, d) in dxrow.iter_mut().enumerate() {
                *d += grow.iter().zip(&wd[i * fout..(i + 1) * fout]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    if sink.slot(w).is_some() {
        let xd = sink.value(x).data().to_vec();
        let dw = sink.slot(w).unwrap();
        for (grow, xrow) in g.chunks_exact(fout).zip(xd.chunks_exact(fin)) {
            for (i, &xv) in xrow.iter().enumerate() {
                for (d, &gv) in dw[i * fout..(i + 1) * fout].iter_mut().zip(grow) {
                    *d += xv * gv;
                }
            }
        }
    }
    if let Some(db) = sink.slot(b) {
        for grow in g.chunks_exact(fout) {
            for (d, gv) in db.iter_mut().zip(grow) {
                *d += gv;
            }
        }
    }
}
