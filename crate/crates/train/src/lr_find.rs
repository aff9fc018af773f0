//! Exponential learning-rate sweep with divergence detection.
//!
//! The step size grows geometrically from `start` to `end`. After every step
//! the loss is folded into a bias-corrected exponential moving average; the
//! sweep stops at the first step whose smoothed loss is non-finite or exceeds
//! `divergence_factor` times the smallest smoothed loss seen so far, and the
//! finder returns that step's learning rate divided by ten.

use ppgbench_core::DatasetBundle;
use ppgbench_models::{Mode, Model, WeightedMse};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::optim::AdamW;
use crate::trainer::{batch_tensor, normalize_for, targets_of, TrainError};
use crate::TrainConfig;

/// Something that can take one optimization step at a given learning rate.
pub trait LrSweep {
    /// Applies one update with step size `lr` and returns the loss observed
    /// for that step (before the update).
    fn step(&mut self, lr: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrFinderConfig {
    pub start: f64,
    pub end: f64,
    pub max_steps: usize,
    pub smoothing: f64,
    pub divergence_factor: f64,
    pub fallback: f64,
}

impl Default for LrFinderConfig {
    fn default() -> Self {
        Self {
            start: 1e-7,
            end: 1.0,
            max_steps: 100,
            smoothing: 0.98,
            divergence_factor: 4.0,
            fallback: 1e-3,
        }
    }
}

impl LrFinderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.start > 0.0 && self.end > self.start && self.end.is_finite()) {
            return Err("lr finder needs 0 < start < end".into());
        }
        if self.max_steps < 2 {
            return Err("lr finder needs at least 2 steps".into());
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err("lr finder smoothing must lie in [0, 1)".into());
        }
        if !(self.divergence_factor > 1.0 && self.fallback > 0.0) {
            return Err("lr finder divergence_factor must exceed 1 and fallback must be positive".into());
        }
        Ok(())
    }

    pub fn learning_rates(&self) -> Vec<f64> {
        let n = self.max_steps;
        let ratio = (self.end / self.start).ln();
        (0..n)
            .map(|i| self.start * (ratio * i as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrFindResult {
    pub learning_rate: f64,
    /// Learning rates actually tried, one per recorded loss.
    pub tried: Vec<f64>,
    pub smoothed_losses: Vec<f64>,
    /// Learning rate at which divergence was detected.
    pub diverged_at: Option<f64>,
}

pub fn find_lr<S: LrSweep>(sweep: &mut S, config: &LrFinderConfig) -> LrFindResult {
    let beta = config.smoothing;
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    let mut tried = Vec::new();
    let mut smoothed_losses = Vec::new();
    for (i, lr) in config.learning_rates().into_iter().enumerate() {
        let loss = sweep.step(lr);
        avg = beta * avg + (1.0 - beta) * loss;
        let smoothed = avg / (1.0 - beta.powi(i as i32 + 1));
        tried.push(lr);
        smoothed_losses.push(smoothed);
        if !smoothed.is_finite() || (i > 0 && smoothed > config.divergence_factor * best) {
            return LrFindResult {
                learning_rate: lr / 10.0,
                tried,
                smoothed_losses,
                diverged_at: Some(lr),
            };
        }
        best = best.min(smoothed);
    }
    LrFindResult {
        learning_rate: config.fallback,
        tried,
        smoothed_losses,
        diverged_at: None,
    }
}

struct ModelSweep<'a> {
    model: Model,
    opt: AdamW,
    bundle: &'a DatasetBundle,
    batches: Vec<Vec<usize>>,
    next: usize,
}

impl LrSweep for ModelSweep<'_> {
    fn step(&mut self, lr: f64) -> f64 {
        let idx = &self.batches[self.next % self.batches.len()];
        self.next += 1;
        let x = batch_tensor(self.bundle, idx);
        let targets = targets_of(self.bundle, idx);
        let weights = vec![(1.0, 1.0); idx.len()];
        let loss = WeightedMse {
            targets: &targets,
            weights: &weights,
            scale: 1.0 / idx.len() as f64,
        };
        match self.model.gradients(&x, &loss, Mode::Train) {
            Ok(g) => {
                self.opt.step(&mut self.model.params, &g.grads, lr);
                g.loss
            }
            Err(_) => f64::NAN,
        }
    }
}

/// Runs the finder on a copy of `model` over micro-batches drawn from
/// `train_indices` in seeded order. The caller's model is not modified.
/// Fewer than `max_steps` micro-batches are cycled.
pub fn lr_find(
    model: &Model,
    bundle: &DatasetBundle,
    train_indices: &[usize],
    config: &TrainConfig,
) -> Result<LrFindResult, TrainError> {
    config.validate().map_err(TrainError::InvalidConfig)?;
    if train_indices.is_empty() {
        return Err(TrainError::EmptyRole("train"));
    }
    let mut model = model.clone();
    normalize_for(&mut model, bundle, train_indices);
    let mut order = train_indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x1f1d));
    let batches = order.chunks(config.micro_batch_size).map(<[usize]>::to_vec).collect();
    let mut sweep = ModelSweep {
        model,
        opt: AdamW::new(config.weight_decay),
        bundle,
        batches,
        next: 0,
    };
    Ok(find_lr(&mut sweep, &config.lr_finder))
}
