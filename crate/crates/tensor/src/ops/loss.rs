use crate::error::{shape_err, Result, TensorError};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::tensor::Tensor;

pub(crate) struct Saved {
    pub logits: Var,
    labels: Vec<usize>,
    probs: Vec<f64>,
}

impl Graph<'_> {
    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let [n, classes] = *v.shape() else {
            return shape_err(format!("cross_entropy expects N×n logits, got {:?}", v.shape()));
        };
        if labels.len() != n {
            return shape_err(format!("{} labels for a batch of {n}", labels.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::LabelOutOfRange { label, classes });
        }
        let mut probs = Vec::with_capacity(n * classes);
        let mut total = 0.0;
        for (row, &label) in v.data().chunks_exact(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            total += log_z - row[label];
            probs.extend(row.iter().map(|&z| (z - log_z).exp()));
        }
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(value, Op::CrossEntropy(Saved { logits, labels: labels.to_vec(), probs })))
    }
}

pub(crate) fn backward(s: &Saved, g: &[f64], sink: &mut GradSink<'_>) {
    let n = s.labels.len();
    let classes = s.probs.len() / n;
    let k = g[0] / n as f64;
    if let Some(dx) = sink.slot(s.logits) {
        for (i, &label) in s.labels.iter().enumerate() {
            for c in 0..classes {
                let target = if c == label { 1.0 } else { 0.0 };
                dx[i * classes + c] += k * (s.probs[i * classes + c] - target);
            }
        }
    }
}
