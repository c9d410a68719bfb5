use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{Layout, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Share of samples, taken from the chronological end, held out for
    /// early stopping.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            clip_norm: 5.0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation MSE per epoch (empty without a validation split).
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mean loss over a set of samples.
pub fn mean_loss(layout: &Layout, params: &[f64], samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += layout.loss(params, s)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mini-batch Adam with gradient-norm clipping and early stopping on the
/// chronological validation tail. `params` ends at the best-validation
/// epoch (or the last epoch when there is no validation split).
pub fn train(layout: &Layout, params: &mut Vec<f64>, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let n_val = (samples.len() as f64 * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(samples.len() - 1);
    let (fit, val) = samples.split_at(samples.len() - n_val);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(layout.total);
    let mut grad = vec![0.0; layout.total];
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
    };
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                loss += layout.loss_and_grad(params, &fit[i], &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            loss *= scale;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            grad.iter_mut().for_each(|g| *g *= scale);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Diverged { epoch, loss: norm });
            }
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.update(params, &grad, cfg.learning_rate);
            epoch_loss += loss;
            batches += 1;
        }
        report.train_loss.push(epoch_loss / batches as f64);
        report.epochs_run = epoch + 1;

        let score = if val.is_empty() {
            *report.train_loss.last().expect("pushed")
        } else {
            let v = mean_loss(layout, params, val)?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, loss: v });
            }
            report.val_loss.push(v);
            v
        };
        if val.is_empty() || score < best.0 {
            best = (score, params.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    *params = best.1;
    Ok(report)
}
