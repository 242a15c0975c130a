//! Mini-batch training with Adam, reduce-on-plateau on validation loss and
//! best-epoch restoration.

use drifa_tensor::{derive_stream, Adam, PlateauScheduler, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{random_view, AugmentOp, Dataset, Sample};
use crate::error::{CoreError, Result};
use crate::metrics::{classification_metrics, ClassificationMetrics};
use crate::net::{argmax_rows, DrifaNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub min_lr: f64,
    pub seed: u64,
    /// Label-preserving transforms applied on the fly to training batches.
    pub augment: Vec<AugmentOp>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 0.001,
            scheduler_factor: 0.2,
            scheduler_patience: 5,
            min_lr: 1e-5,
            seed: 0,
            augment: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            return bad("need lr > 0 and 0 <= min_lr <= lr");
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) || self.scheduler_patience == 0 {
            return bad("scheduler factor must be in (0, 1) and patience positive");
        }
        Ok(())
    }

    pub fn scheduler(&self) -> PlateauScheduler {
        PlateauScheduler::new(self.lr, self.scheduler_factor, self.scheduler_patience, self.min_lr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation accuracy per task.
    pub val_accuracy: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Deterministic loss and per-task predictions over a dataset, `chunk`
/// samples at a time. The loss is the sample-weighted mean over chunks.
pub struct Evaluation {
    pub loss: f64,
    pub predictions: Vec<Vec<usize>>,
    pub probabilities: Vec<Tensor>,
}

pub fn evaluate(net: &DrifaNet, data: &Dataset, chunk: usize) -> Result<Evaluation> {
    let tasks = net.config.tasks.len();
    let mut loss = 0.0;
    let mut predictions = vec![Vec::with_capacity(data.len()); tasks];
    let mut probs: Vec<Vec<f64>> = vec![Vec::new(); tasks];
    let indices: Vec<usize> = (0..data.len()).collect();
    for part in indices.chunks(chunk.max(1)) {
        let batch = data.batch(part);
        loss += net.evaluate_loss(&batch)?.loss * part.len() as f64;
        for (t, p) in net.probabilities(&batch.inputs, None)?.into_iter().enumerate() {
            predictions[t].extend(argmax_rows(&p));
            probs[t].extend_from_slice(p.data());
        }
    }
    let probabilities = probs
        .into_iter()
        .zip(&net.config.tasks)
        .map(|(p, &n)| Tensor::new(vec![data.len(), n], p))
        .collect::<drifa_tensor::Result<_>>()?;
    Ok(Evaluation { loss: loss / data.len().max(1) as f64, predictions, probabilities })
}

/// Per-task metrics of deterministic predictions.
pub fn task_metrics(net: &DrifaNet, data: &Dataset, predictions: &[Vec<usize>]) -> Result<Vec<ClassificationMetrics>> {
    net.config
        .tasks
        .iter()
        .enumerate()
        .map(|(t, &n)| classification_metrics(&predictions[t], &data.labels(t), n))
        .collect()
}

/// Trains `net` in place. After the last epoch the parameters from the epoch
/// with the lowest validation loss are restored (training loss is used when
/// the validation set is empty). `on_epoch` sees every record as it is made.
pub fn train(
    net: &mut DrifaNet,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::Dataset("training set is empty".into()));
    }
    let mut adam = Adam::new(config.lr);
    let mut scheduler = config.scheduler();
    let mut dropout_rng = derive_stream(config.seed, u64::MAX);
    let mut augment_rng = derive_stream(config.seed, u64::MAX - 1);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;

    for epoch in 0..config.epochs {
        let lr = scheduler.lr;
        adam.lr = lr;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut derive_stream(config.seed, epoch as u64));
        let mut total = 0.0;
        for part in order.chunks(config.batch_size) {
            let batch = if config.augment.is_empty() {
                train_set.batch(part)
            } else {
                let views: Vec<Sample> = part
                    .iter()
                    .map(|&i| random_view(&train_set.samples[i], &config.augment, &mut augment_rng))
                    .collect::<Result<_>>()?;
                train_set.batch_of(&views.iter().collect::<Vec<_>>())
            };
            total += net.train_step(&batch, &mut adam, &mut dropout_rng)?.loss * part.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;

        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (train_loss, vec![0.0; net.config.tasks.len()])
        } else {
            let ev = evaluate(net, val_set, config.batch_size.max(64))?;
            let acc = task_metrics(net, val_set, &ev.predictions)?.iter().map(|m| m.accuracy).collect();
            (ev.loss, acc)
        };
        scheduler.step(val_loss);

        let record = EpochRecord { epoch, lr, train_loss, val_loss, val_accuracy };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            let snapshot = net.store.iter().map(|(_, p)| p.value.clone()).collect();
            best = Some((epoch, val_loss, snapshot));
        }
    }

    let (best_epoch, best_val_loss, snapshot) = best.expect("at least one epoch");
    for ((_, p), value) in net.store.iter_mut().zip(snapshot) {
        p.value = value;
    }
    Ok(TrainOutcome { history, best_epoch, best_val_loss })
}
