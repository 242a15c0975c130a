//! Monte Carlo dropout ensembles and uncertainty scoring.

use std::fmt::Write as _;

use drifa_tensor::{derive_stream, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics::{classification_metrics, ClassificationMetrics};
use crate::net::{argmax_rows, DrifaNet, Stochastic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Ensemble members.
    pub z: usize,
    /// Stochastic passes per member.
    pub e: usize,
    pub dropout_rate: f64,
    /// One base seed per member.
    pub seeds: Vec<u64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { z: 5, e: 20, dropout_rate: 0.25, seeds: (0..5).collect() }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z == 0 || self.e == 0 {
            return Err(CoreError::InvalidConfig("ensemble z and e must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::InvalidConfig(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.seeds.len() != self.z {
            return Err(CoreError::InvalidConfig(format!("{} seeds for {} ensemble members", self.seeds.len(), self.z)));
        }
        Ok(())
    }

    pub fn passes(&self) -> usize {
        self.z * self.e
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    /// N×n averaged softmax.
    pub mean_probs: Tensor,
    pub predicted: Vec<usize>,
    pub entropy: Vec<f64>,
    /// N×n per-class sample variance across passes.
    pub variance: Tensor,
}

/// Averages `passes` (each N×n) in index order.
///
/// The mean is accumulated as an offset from the first pass, so identical
/// passes reproduce it exactly and give zero variance.
pub fn summarize_passes(passes: &[Tensor]) -> PredictiveDistribution {
    let first = &passes[0];
    let count = passes.len() as f64;
    let mut mean = first.clone();
    {
        let m = mean.data_mut();
        let mut shift = vec![0.0; m.len()];
        for p in &passes[1..] {
            for ((s, &v), &f) in shift.iter_mut().zip(p.data()).zip(first.data()) {
                *s += v - f;
            }
        }
        for (m, s) in m.iter_mut().zip(shift) {
            *m += s / count;
        }
    }
    let mut variance = Tensor::zeros(first.shape().to_vec());
    if passes.len() > 1 {
        let v = variance.data_mut();
        for p in passes {
            for ((acc, &x), &mu) in v.iter_mut().zip(p.data()).zip(mean.data()) {
                *acc += (x - mu) * (x - mu);
            }
        }
        v.iter_mut().for_each(|acc| *acc /= count - 1.0);
    }
    let n = first.shape()[1];
    let entropy = mean
        .data()
        .chunks_exact(n)
        .map(|row| {
            let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
            h.clamp(0.0, (n as f64).ln())
        })
        .collect();
    PredictiveDistribution { predicted: argmax_rows(&mean), mean_probs: mean, entropy, variance }
}

/// Runs `z × e` dropout passes and summarises them, one distribution per task.
/// Pass `k` draws its masks from stream `k mod e` of seed `seeds[k / e]`, so
/// the result does not depend on how passes are scheduled.
pub fn mc_predict(net: &DrifaNet, inputs: &[Tensor], config: &EnsembleConfig) -> Result<Vec<PredictiveDistribution>> {
    config.validate()?;
    let passes: Vec<Vec<Tensor>> = (0..config.passes())
        .into_par_iter()
        .map(|k| {
            let mut rng = derive_stream(config.seeds[k / config.e], (k % config.e) as u64);
            net.probabilities(inputs, Some(Stochastic { rng: &mut rng, rate: config.dropout_rate }))
        })
        .collect::<Result<_>>()?;
    let tasks = passes[0].len();
    Ok((0..tasks)
        .map(|t| {
            let per_task: Vec<Tensor> = passes.iter().map(|p| p[t].clone()).collect();
            summarize_passes(&per_task)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleRecord {
    pub id: usize,
    pub predicted: usize,
    pub truth: usize,
    pub entropy: f64,
    pub max_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyDecile {
    pub min_entropy: f64,
    pub max_entropy: f64,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UncertaintyReport {
    pub metrics: ClassificationMetrics,
    pub mean_entropy: f64,
    pub mean_max_prob: f64,
    /// Mean entropy over correct / misclassified samples; `None` when empty.
    pub correct_entropy: Option<f64>,
    pub wrong_entropy: Option<f64>,
    /// Samples sorted by entropy and cut into ten equal-count bins.
    pub deciles: Vec<EntropyDecile>,
    pub records: Vec<SampleRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

pub fn uncertainty_report(dist: &PredictiveDistribution, labels: &[usize]) -> Result<UncertaintyReport> {
    let n = dist.predicted.len();
    if labels.len() != n {
        return Err(CoreError::LengthMismatch(format!("{} labels for {n} predictions", labels.len())));
    }
    let classes = dist.mean_probs.shape()[1];
    let metrics = classification_metrics(&dist.predicted, labels, classes)?;
    let records: Vec<SampleRecord> = (0..n)
        .map(|i| SampleRecord {
            id: i,
            predicted: dist.predicted[i],
            truth: labels[i],
            entropy: dist.entropy[i],
            max_prob: dist.mean_probs.data()[i * classes..(i + 1) * classes].iter().copied().fold(0.0, f64::max),
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist.entropy[a].total_cmp(&dist.entropy[b]).then(a.cmp(&b)));
    let mut deciles = Vec::new();
    for d in 0..10 {
        let bin = &order[d * n / 10..(d + 1) * n / 10];
        if bin.is_empty() {
            continue;
        }
        let correct = bin.iter().filter(|&&i| records[i].predicted == records[i].truth).count();
        deciles.push(EntropyDecile {
            min_entropy: dist.entropy[bin[0]],
            max_entropy: dist.entropy[*bin.last().unwrap()],
            count: bin.len(),
            accuracy: correct as f64 / bin.len() as f64,
        });
    }

    Ok(UncertaintyReport {
        metrics,
        mean_entropy: mean(records.iter().map(|r| r.entropy)).unwrap_or(0.0),
        mean_max_prob: mean(records.iter().map(|r| r.max_prob)).unwrap_or(0.0),
        correct_entropy: mean(records.iter().filter(|r| r.predicted == r.truth).map(|r| r.entropy)),
        wrong_entropy: mean(records.iter().filter(|r| r.predicted != r.truth).map(|r| r.entropy)),
        deciles,
        records,
    })
}

impl UncertaintyReport {
    /// Summary block followed by one line per sample.
    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        let mut out = String::new();
        let m = &self.metrics;
        writeln!(out, "[summary]").unwrap();
        writeln!(out, "accuracy = {:.6}", m.accuracy).unwrap();
        writeln!(out, "precision = {:.6}", m.precision).unwrap();
        writeln!(out, "recall = {:.6}", m.recall).unwrap();
        writeln!(out, "f1 = {:.6}", m.f1).unwrap();
        writeln!(out, "mean_entropy = {:.6}", self.mean_entropy).unwrap();
        writeln!(out, "mean_max_prob = {:.6}", self.mean_max_prob).unwrap();
        writeln!(out, "correct_entropy = {}", opt(self.correct_entropy)).unwrap();
        writeln!(out, "wrong_entropy = {}", opt(self.wrong_entropy)).unwrap();
        writeln!(out, "\n[deciles]\nmin_entropy,max_entropy,count,accuracy").unwrap();
        for d in &self.deciles {
            writeln!(out, "{:.6},{:.6},{},{:.6}", d.min_entropy, d.max_entropy, d.count, d.accuracy).unwrap();
        }
        writeln!(out, "\n[samples]\nid,predicted,true,entropy,max_prob").unwrap();
        for r in &self.records {
            writeln!(out, "{},{},{},{:.6},{:.6}", r.id, r.predicted, r.truth, r.entropy, r.max_prob).unwrap();
        }
        out
    }
}
