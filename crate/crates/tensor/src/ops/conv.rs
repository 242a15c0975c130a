use crate::error::{shape_err, Result, TensorError};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

pub(crate) struct Saved {
    pub x: Var,
    pub w: Var,
    geom: Geometry,
}

fn out_dim(size: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(size);
            Some((out, total / 2))
        }
        Padding::Valid => (size >= k).then(|| ((size - k) / stride + 1, 0)),
    }
}

impl Geometry {
    fn new(x: &[usize], wt: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if x.len() != 4 || wt.len() != 4 {
            return shape_err(format!("conv2d expects NHWC input and KKIO weight, got {x:?} and {wt:?}"));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (n, h, w, cin) = (x[0], x[1], x[2], x[3]);
        let (k, k2, wcin, cout) = (wt[0], wt[1], wt[2], wt[3]);
        if k != k2 {
            return shape_err(format!("conv2d kernel must be square, got {k}x{k2}"));
        }
        if wcin != cin {
            return shape_err(format!("conv2d weight expects {wcin} input channels, input has {cin}"));
        }
        let (oh, pad_top) = out_dim(h, k, stride, padding)
            .ok_or_else(|| TensorError::ShapeMismatch(format!("kernel {k} larger than height {h}")))?;
        let (ow, pad_left) = out_dim(w, k, stride, padding)
            .ok_or_else(|| TensorError::ShapeMismatch(format!("kernel {k} larger than width {w}")))?;
        Ok(Self { n, h, w, cin, k, cout, oh, ow, stride, pad_top, pad_left })
    }

    /// Calls `f(out_pixel, in_pixel, tap)` for every valid (output, kernel tap) pair.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for b in 0..self.n {
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let opix = (b * self.oh + oy) * self.ow + ox;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let ipix = (b * self.h + iy as usize) * self.w + ix as usize;
                            f(opix, ipix, ky * self.k + kx);
                        }
                    }
                }
            }
        }
    }
}

impl Graph<'_> {
    /// 2-D convolution over an N×H×W×C_in input with a K×K×C_in×C_out kernel.
    pub fn conv2d(&mut self, x: Var, weight: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = Geometry::new(self.shape(x), self.shape(weight), stride, padding)?;
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let (cin, cout) = (geom.cin, geom.cout);
        let mut out = vec![0.0; geom.n * geom.oh * geom.ow * cout];
        geom.for_each_tap(|opix, ipix, tap| {
            let orow = &mut out[opix * cout..(opix + 1) * cout];
            let xrow = &xd[ipix * cin..(ipix + 1) * cin];
            let wtap = &wd[tap * cin * cout..(tap + 1) * cin * cout];
            for (ci, &xv) in xrow.iter().enumerate() {
                let wrow = &wtap[ci * cout..(ci + 1) * cout];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        });
        let value = Tensor::from_parts(vec![geom.n, geom.oh, geom.ow, cout], out);
        Ok(self.push(value, Op::Conv2d(Saved { x, w: weight, geom })))
    }
}

pub(crate) fn backward(s: &Saved, g: &[f64], sink: &mut GradSink<'_>) {
    let geom = s.geom;
    let (cin, cout) = (geom.cin, geom.cout);
    if sink.slot(s.x).is_some() {
        let wd = sink.value(s.w).data().to_vec();
        let dx = sink.slot(s.x).unwrap();
        geom.for_each_tap(|opix, ipix, tap| {
            let grow = &g[opix * cout..(opix + 1) * cout];
            let wtap = &wd[tap * cin * cout..(tap + 1) * cin * cout];
            for ci in 0..cin {
                let wrow = &wtap[ci * cout..(ci + 1) * cout];
                dx[ipix * cin + ci] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            }
        });
    }
    if sink.slot(s.w).is_some() {
        let xd = sink.value(s.x).data().to_vec();
        let dw = sink.slot(s.w).unwrap();
        geom.for_each_tap(|opix, ipix, tap| {
            let grow = &g[opix * cout..(opix + 1) * cout];
            let xrow = &xd[ipix * cin..(ipix + 1) * cin];
            let dwtap = &mut dw[tap * cin * cout..(tap + 1) * cin * cout];
            for (ci, &xv) in xrow.iter().enumerate() {
                for (d, &gv) in dwtap[ci * cout..(ci + 1) * cout].iter_mut().zip(grow) {
                    *d += xv * gv;
                }
            }
        });
    }
}
