#![allow(dead_code)]

pub mod suites;

use drifa_tensor::{stream, Graph, ParamStore, Tensor, Var};
use rand::Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Redraws every parameter: omegas from U(0.5, 1.5), everything else from
/// U(-scale, scale), so biases and modulation weights are exercised too.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = stream(seed);
    for (_, p) in store.iter_mut() {
        let omega = p.name.contains("omega");
        p.value.data_mut().iter_mut().for_each(|v| {
            *v = if omega { rng.random_range(0.5..1.5) } else { rng.random_range(-scale..scale) }
        });
    }
}

/// Central differences against autodiff for every input element and every
/// trainable parameter element (at most `per_tensor` evenly spaced entries of
/// each). The loss is a fixed random projection of the output. Returns the
/// worst relative error `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn fd_check(
    store: &ParamStore,
    inputs: &[Tensor],
    per_tensor: usize,
    build: impl Fn(&mut Graph, &[Var]) -> Var,
) -> f64 {
    const H: f64 = 1e-5;
    let loss_of = |store: &ParamStore, vals: &[Tensor]| -> f64 {
        let mut g = Graph::with_params(store);
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        let proj = g.constant(random_tensor(&g.shape(out).to_vec(), 0xfeed));
        let weighted = g.mul(out, proj).unwrap();
        let loss = g.sum(weighted);
        g.value(loss).data()[0]
    };

    let (input_grads, param_grads) = {
        let mut g = Graph::with_params(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars);
        let proj = g.constant(random_tensor(&g.shape(out).to_vec(), 0xfeed));
        let weighted = g.mul(out, proj).unwrap();
        let loss = g.sum(weighted);
        let grads = g.backward(loss).unwrap();
        let per_input: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.wrt(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        let mut with_grads = store.clone();
        with_grads.load_grads(&grads);
        (per_input, with_grads)
    };

    let picks = |numel: usize| -> Vec<usize> {
        if numel <= per_tensor {
            (0..numel).collect()
        } else {
            (0..per_tensor).map(|k| k * numel / per_tensor).collect()
        }
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst = 0.0f64;

    for (i, t) in inputs.iter().enumerate() {
        for j in picks(t.numel()) {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (loss_of(store, &plus) - loss_of(store, &minus)) / (2.0 * H);
            worst = worst.max(rel(input_grads[i][j], numeric));
        }
    }
    for (id, p) in param_grads.iter() {
        if !p.trainable {
            continue;
        }
        let analytic = p.grad.as_ref().expect("loaded").data().to_vec();
        for j in picks(p.value.numel()) {
            let mut plus = store.clone();
            plus.value_mut(id).data_mut()[j] += H;
            let mut minus = store.clone();
            minus.value_mut(id).data_mut()[j] -= H;
            let numeric = (loss_of(&plus, inputs) - loss_of(&minus, inputs)) / (2.0 * H);
            let err = rel(analytic[j], numeric);
            assert!(err.is_finite(), "{}[{j}]: non-finite error", p.name);
            worst = worst.max(err);
        }
    }
    worst
}

/// Plain nested-loop implementations used as independent references.
pub mod reference {
    use drifa_tensor::{ParamStore, Tensor};

    #[derive(Clone, Debug)]
    pub struct Map {
        pub n: usize,
        pub h: usize,
        pub w: usize,
        pub c: usize,
        pub data: Vec<f64>,
    }

    impl Map {
        pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
            Self { n, h, w, c, data: vec![0.0; n * h * w * c] }
        }

        pub fn from_tensor(t: &Tensor) -> Self {
            let s = t.shape();
            Self { n: s[0], h: s[1], w: s[2], c: s[3], data: t.data().to_vec() }
        }

        pub fn at(&self, b: usize, y: usize, x: usize, ch: usize) -> f64 {
            self.data[((b * self.h + y) * self.w + x) * self.c + ch]
        }

        pub fn set(&mut self, b: usize, y: usize, x: usize, ch: usize, v: f64) {
            self.data[((b * self.h + y) * self.w + x) * self.c + ch] = v;
        }

        pub fn add(&self, other: &Map) -> Map {
            let mut out = self.clone();
            for (o, v) in out.data.iter_mut().zip(&other.data) {
                *o += v;
            }
            out
        }
    }

    pub fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    pub fn param(store: &ParamStore, name: &str) -> Vec<f64> {
        store.by_name(name).unwrap_or_else(|e| panic!("{e}")).value.data().to_vec()
    }

    /// Same-padded convolution with a K×K×Cin×Cout weight.
    pub fn conv(x: &Map, weight: &[f64], bias: &[f64], k: usize, cout: usize, stride: usize) -> Map {
        let oh = x.h.div_ceil(stride);
        let ow = x.w.div_ceil(stride);
        let pad_t = ((oh - 1) * stride + k).saturating_sub(x.h) / 2;
        let pad_l = ((ow - 1) * stride + k).saturating_sub(x.w) / 2;
        let mut out = Map::zeros(x.n, oh, ow, cout);
        for b in 0..x.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..cout {
                        let mut acc = bias[co];
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad_t as isize;
                                let ix = (ox * stride + kx) as isize - pad_l as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                for ci in 0..x.c {
                                    acc += x.at(b, iy as usize, ix as usize, ci)
                                        * weight[((ky * k + kx) * x.c + ci) * cout + co];
                                }
                            }
                        }
                        out.set(b, oy, ox, co, acc);
                    }
                }
            }
        }
        out
    }

    pub fn conv_named(store: &ParamStore, name: &str, x: &Map, k: usize, stride: usize) -> Map {
        let bias = param(store, &format!("{name}.bias"));
        conv(x, &param(store, &format!("{name}.weight")), &bias, k, bias.len(), stride)
    }

    /// Rows of `x` (N×Fin) times W (Fin×Fout) plus bias.
    pub fn dense(x: &[Vec<f64>], weight: &[f64], bias: &[f64]) -> Vec<Vec<f64>> {
        let fout = bias.len();
        x.iter()
            .map(|row| {
                (0..fout)
                    .map(|o| bias[o] + row.iter().enumerate().map(|(i, v)| v * weight[i * fout + o]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    pub fn dense_named(store: &ParamStore, name: &str, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        dense(x, &param(store, &format!("{name}.weight")), &param(store, &format!("{name}.bias")))
    }

    #[derive(Clone, Copy)]
    pub enum Pool {
        Avg,
        Max,
        Min,
    }

    fn reduce(kind: Pool, vals: &[f64]) -> f64 {
        match kind {
            Pool::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
            Pool::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Pool::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// N×C.
    pub fn global_pool(kind: Pool, x: &Map) -> Vec<Vec<f64>> {
        (0..x.n)
            .map(|b| {
                (0..x.c)
                    .map(|ch| {
                        let vals: Vec<f64> =
                            (0..x.h).flat_map(|y| (0..x.w).map(move |xx| (y, xx))).map(|(y, xx)| x.at(b, y, xx, ch)).collect();
                        reduce(kind, &vals)
                    })
                    .collect()
            })
            .collect()
    }

    /// 3×3 window, stride 1, centred; cells outside the image are skipped.
    pub fn local_pool(kind: Pool, x: &Map) -> Map {
        let mut out = Map::zeros(x.n, x.h, x.w, x.c);
        for b in 0..x.n {
            for y in 0..x.h {
                for xx in 0..x.w {
                    for ch in 0..x.c {
                        let mut vals = Vec::new();
                        for yy in y.saturating_sub(1)..=(y + 1).min(x.h - 1) {
                            for xw in xx.saturating_sub(1)..=(xx + 1).min(x.w - 1) {
                                vals.push(x.at(b, yy, xw, ch));
                            }
                        }
                        out.set(b, y, xx, ch, reduce(kind, &vals));
                    }
                }
            }
        }
        out
    }

    pub fn hifa(store: &ParamStore, prefix: &str, x: &Map) -> Vec<Vec<f64>> {
        let psi = |i: usize, m: &Map| conv_named(store, &format!("{prefix}.psi{i}"), m, 1, 1);
        let pi = psi(0, x);
        let l1 = psi(1, &pi);
        let l2 = psi(2, &pi.add(&l1));
        let l3 = psi(3, &l2);
        let pools =
            [global_pool(Pool::Avg, &pi), global_pool(Pool::Max, &l1), global_pool(Pool::Avg, &l2), global_pool(Pool::Max, &l3)];
        let rows: Vec<Vec<f64>> =
            (0..x.n).map(|b| pools.iter().flat_map(|p| p[b].iter().copied()).collect()).collect();
        dense_named(store, &format!("{prefix}.f"), &rows)
    }

    pub fn clia(store: &ParamStore, prefix: &str, x: &Map) -> Map {
        let mut eta1 = conv_named(store, &format!("{prefix}.psi1"), x, 1, 1);
        eta1.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        let p1 = local_pool(Pool::Avg, &eta1);
        let mut eta2 = conv_named(store, &format!("{prefix}.psi2"), &p1, 1, 1);
        eta2.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        p1.add(&local_pool(Pool::Avg, &eta2))
    }

    const KINDS: [(Pool, &str, &str); 3] =
        [(Pool::Min, "gmin", "lmin"), (Pool::Max, "gmax", "lmax"), (Pool::Avg, "gavg", "lavg")];

    pub fn mglif_global(store: &ParamStore, xs: &[Map]) -> Vec<Vec<f64>> {
        let (n, c) = (xs[0].n, xs[0].c);
        let mut out = vec![vec![0.0; c]; n];
        for (kind, gname, _) in KINDS {
            let mut summed = vec![vec![0.0; c]; n];
            for x in xs {
                for (srow, prow) in summed.iter_mut().zip(global_pool(kind, x)) {
                    for (s, p) in srow.iter_mut().zip(prow) {
                        *s += p;
                    }
                }
            }
            for (orow, frow) in out.iter_mut().zip(dense_named(store, &format!("mifa.fpool.{gname}"), &summed)) {
                for (o, f) in orow.iter_mut().zip(frow) {
                    *o += f;
                }
            }
        }
        out
    }

    pub fn mglif_local(store: &ParamStore, xs: &[Map]) -> Map {
        let x0 = &xs[0];
        let mut out = Map::zeros(x0.n, x0.h, x0.w, x0.c);
        for (kind, _, lname) in KINDS {
            let mut summed = Map::zeros(x0.n, x0.h, x0.w, x0.c);
            for x in xs {
                summed = summed.add(&local_pool(kind, x));
            }
            out = out.add(&conv_named(store, &format!("mifa.fpool.{lname}"), &summed, 1, 1));
        }
        out
    }

    /// σ(local·w_local + global·w_global) with the N×C global term broadcast.
    pub fn attention(global: Option<&[Vec<f64>]>, local: Option<&Map>, w_global: f64, w_local: f64, shape: [usize; 4]) -> Map {
        let [n, h, w, c] = shape;
        let mut out = Map::zeros(n, h, w, c);
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let mut z = 0.0;
                        if let Some(l) = local {
                            z += l.at(b, y, x, ch) * w_local;
                        }
                        if let Some(gl) = global {
                            z += gl[b][ch] * w_global;
                        }
                        out.set(b, y, x, ch, sigmoid(z));
                    }
                }
            }
        }
        out
    }

    /// x ⊗ a ⊗ ω (ω per channel).
    pub fn apply(x: &Map, a: &Map, omega: &[f64]) -> Map {
        let mut out = x.clone();
        for (i, o) in out.data.iter_mut().enumerate() {
            *o = x.data[i] * a.data[i] * omega[i % x.c];
        }
        out
    }
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}
