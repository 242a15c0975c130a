use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};

#[derive(Clone, Debug)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    step: u64,
    moments: HashMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, betas: (0.9, 0.999), eps: 1e-8, step: 0, moments: HashMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter of `store`.
    /// Frozen parameters are skipped and keep no moment state.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(TensorError::MissingGrad(p.name.clone()));
        }
        self.step += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.as_ref().expect("checked above").data();
            let m = self.moments.entry(id).or_insert_with(|| Moments {
                first: vec![0.0; grad.len()],
                second: vec![0.0; grad.len()],
            });
            let values = p.value.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m.first[i] = b1 * m.first[i] + (1.0 - b1) * g;
                m.second[i] = b2 * m.second[i] + (1.0 - b2) * g * g;
                let m_hat = m.first[i] / c1;
                let v_hat = m.second[i] / c2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau for a metric where lower is better.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best_metric: f64,
    epochs_since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_lr,
            best_metric: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }

    pub fn best_metric(&self) -> f64 {
        self.best_metric
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.epochs_since_improvement
    }

    /// Records one epoch's metric and returns the learning rate to use next.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best_metric {
            self.best_metric = metric;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.epochs_since_improvement = 0;
            }
        }
        self.lr
    }
}
