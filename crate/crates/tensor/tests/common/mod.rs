#![allow(dead_code)]

use drifa_tensor::{stream, Graph, Tensor, Var};
use rand::Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Central-difference check of `build` against autodiff. The scalar loss is a
/// fixed random projection of the op output so that every output element
/// contributes a distinct weight. Returns the max relative error over every
/// input element.
pub fn max_grad_error(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    const H: f64 = 1e-5;
    let loss_of = |vals: &[Tensor], want_grads: bool| -> (f64, Option<Vec<Vec<f64>>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars);
        let shape = g.shape(out).to_vec();
        let proj = g.constant(random_tensor(&shape, 0xfeed));
        let weighted = g.mul(out, proj).unwrap();
        let loss = g.sum(weighted);
        let value = g.value(loss).data()[0];
        if !want_grads {
            return (value, None);
        }
        let grads = g.backward(loss).unwrap();
        let per_input = vars
            .iter()
            .zip(vals)
            .map(|(&v, t)| grads.wrt(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        (value, Some(per_input))
    };

    let (_, analytic) = loss_of(inputs, true);
    let analytic = analytic.unwrap();
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * H);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
