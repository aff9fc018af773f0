use std::collections::BTreeMap;

use ppgbench_core::adaptation::{assign_weights, WeightTables};
use ppgbench_core::metrics::{self, median_baseline, MetricsError};
use ppgbench_core::{BpPair, DatasetBundle, Role, SplitAssignment};
use ppgbench_models::{save_checkpoint, BnUpdate, Mode, Model, ModelError, Tensor, WeightedMse, BN_MOMENTUM};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::history::{EpochRecord, TrainHistory};
use crate::lr_find::lr_find;
use crate::optim::AdamW;
use crate::{LearningRate, TrainConfig};

const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("no segments with role {0}")]
    EmptyRole(&'static str),
    #[error("assignment does not cover segment {0}")]
    Uncovered(String),
    #[error("non-finite loss in epoch {epoch}, step {step} (segment {segment_id})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        segment_id: String,
    },
    #[error("epoch {epoch}: validation metrics failed: {source}")]
    Validation { epoch: usize, source: MetricsError },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The selected model with the training-set quantities later evaluation needs.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub best_epoch: usize,
    /// Median training-set labels, the MASE reference predictor.
    pub baseline: BpPair,
}

/// `[n, 1, L]` input batch for the given records.
pub fn batch_tensor(bundle: &DatasetBundle, indices: &[usize]) -> Tensor {
    let len = indices.first().map_or(0, |&i| bundle.records[i].waveform.len());
    let mut data = Vec::with_capacity(indices.len() * len);
    for &i in indices {
        data.extend(bundle.records[i].waveform.iter().map(|&v| v as f64));
    }
    Tensor::new(vec![indices.len(), 1, len], data)
}

pub(crate) fn targets_of(bundle: &DatasetBundle, indices: &[usize]) -> Vec<(f64, f64)> {
    indices
        .iter()
        .map(|&i| (bundle.records[i].sbp, bundle.records[i].dbp))
        .collect()
}

fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        sum += v;
        sq += v * v;
    }
    let mean = sum / n;
    let sd = (sq / n - mean * mean).max(0.0).sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Sets the model's input and output normalization from training statistics.
pub(crate) fn normalize_for(model: &mut Model, bundle: &DatasetBundle, train: &[usize]) {
    let recs = || train.iter().map(|&i| &bundle.records[i]);
    let (x_mean, x_sd) = mean_sd(recs().flat_map(|r| r.waveform.iter().map(|&v| v as f64)));
    let (s_mean, s_sd) = mean_sd(recs().map(|r| r.sbp));
    let (d_mean, d_sd) = mean_sd(recs().map(|r| r.dbp));
    model.set_input_normalization(x_mean, x_sd);
    model.set_output_normalization((s_mean, d_mean), (s_sd, d_sd));
}

/// Inference-mode predictions for the given records.
pub fn predict(model: &Model, bundle: &DatasetBundle, indices: &[usize]) -> Result<Vec<BpPair>, ModelError> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(PREDICT_CHUNK) {
        let y = model.forward(&batch_tensor(bundle, chunk))?;
        out.extend(y.data.chunks_exact(2).map(|p| BpPair::new(p[0], p[1])));
    }
    Ok(out)
}

/// Gradient of one effective batch.
#[derive(Debug, Clone)]
pub struct Accumulated {
    /// Mean weighted loss over the effective batch.
    pub loss: f64,
    /// Sum of micro-batch gradients of `(1/B) sum_i loss_i`.
    pub grads: BTreeMap<String, Vec<f64>>,
    /// Batch-norm statistics of every micro-batch, in order.
    pub bn_updates: Vec<BnUpdate>,
}

/// Sums micro-batch gradients over one effective batch. Every micro-batch is
/// scaled by `1 / indices.len()`, so the result does not depend on
/// `micro_batch_size` beyond summation order (for models without batch norm).
/// Micro-batches run in parallel and are reduced in index order.
///
/// On failure returns the position in `indices` of the offending sample.
pub fn accumulate_gradients(
    model: &Model,
    bundle: &DatasetBundle,
    indices: &[usize],
    weights: &[(f64, f64)],
    micro_batch_size: usize,
) -> Result<Accumulated, (usize, ModelError)> {
    assert_eq!(indices.len(), weights.len());
    let scale = 1.0 / indices.len() as f64;
    let parts: Vec<_> = indices
        .par_chunks(micro_batch_size)
        .zip(weights.par_chunks(micro_batch_size))
        .enumerate()
        .map(|(m, (idx, w))| {
            let targets = targets_of(bundle, idx);
            let loss = WeightedMse {
                targets: &targets,
                weights: w,
                scale,
            };
            model
                .gradients(&batch_tensor(bundle, idx), &loss, Mode::Train)
                .map_err(|e| {
                    let at = match e {
                        ModelError::NonFiniteLoss { sample } => sample,
                        _ => 0,
                    };
                    (m * micro_batch_size + at, e)
                })
        })
        .collect();
    let mut acc = Accumulated {
        loss: 0.0,
        grads: BTreeMap::new(),
        bn_updates: Vec::new(),
    };
    for part in parts {
        let part = part?;
        acc.loss += part.loss;
        for (k, g) in part.grads {
            match acc.grads.get_mut(&k) {
                Some(sum) => sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v),
                None => {
                    acc.grads.insert(k, g);
                }
            }
        }
        acc.bn_updates.extend(part.bn_updates);
    }
    Ok(acc)
}

/// Trains `model` on the train role of `assignment` and returns the model
/// from the epoch with the lowest mean validation MAE.
///
/// With `weights` each training sample's loss terms are scaled by its SBP and
/// DBP bin weights; validation is always unweighted. The run is a pure
/// function of its inputs: shuffles derive from `config.seed` and
/// micro-batch results are reduced in a fixed order.
pub fn train(
    mut model: Model,
    bundle: &DatasetBundle,
    assignment: &SplitAssignment,
    config: &TrainConfig,
    weights: Option<&WeightTables>,
) -> Result<(TrainedModel, TrainHistory), TrainError> {
    config.validate().map_err(TrainError::InvalidConfig)?;
    if let Some(r) = bundle.records.iter().find(|r| assignment.role(&r.segment_id).is_none()) {
        return Err(TrainError::Uncovered(r.segment_id.clone()));
    }
    let train_idx = assignment.indices(bundle, Role::Train);
    let val_idx = assignment.indices(bundle, Role::Validation);
    if train_idx.is_empty() {
        return Err(TrainError::EmptyRole("train"));
    }
    if val_idx.is_empty() {
        return Err(TrainError::EmptyRole("validation"));
    }
    let train_labels: Vec<BpPair> = train_idx
        .iter()
        .map(|&i| BpPair::from(targets_of(bundle, &[i])[0]))
        .collect();
    let baseline = median_baseline(&train_labels).map_err(|source| TrainError::Validation { epoch: 0, source })?;
    let val_refs: Vec<BpPair> = val_idx
        .iter()
        .map(|&i| BpPair::from(targets_of(bundle, &[i])[0]))
        .collect();

    normalize_for(&mut model, bundle, &train_idx);
    let lr = match config.learning_rate {
        LearningRate::Fixed(lr) => lr,
        LearningRate::Auto => lr_find(&model, bundle, &train_idx, config)?.learning_rate,
    };
    let sample_weights: BTreeMap<usize, (f64, f64)> = match weights {
        Some(t) => train_idx
            .iter()
            .copied()
            .zip(assign_weights(
                train_idx.iter().map(|&i| &bundle.records[i]),
                &t.sbp,
                &t.dbp,
            ))
            .collect(),
        None => train_idx.iter().map(|&i| (i, (1.0, 1.0))).collect(),
    };

    let mut opt = AdamW::new(config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = train_idx.clone();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Model)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_total = 0.0;
        for (step, batch) in order.chunks(config.effective_batch_size).enumerate() {
            let w: Vec<(f64, f64)> = batch.iter().map(|i| sample_weights[i]).collect();
            let acc =
                accumulate_gradients(&model, bundle, batch, &w, config.micro_batch_size).map_err(
                    |(at, e)| match e {
                        ModelError::NonFiniteLoss { .. } => TrainError::NonFiniteLoss {
                            epoch,
                            step: step + 1,
                            segment_id: bundle.records[batch[at]].segment_id.clone(),
                        },
                        other => TrainError::Model(other),
                    },
                )?;
            loss_total += acc.loss * batch.len() as f64;
            opt.step(&mut model.params, &acc.grads, lr);
            model.apply_bn_updates(&acc.bn_updates, BN_MOMENTUM);
        }

        let preds = predict(&model, bundle, &val_idx)?;
        let mae = metrics::mae(&preds, &val_refs).map_err(|source| TrainError::Validation { epoch, source })?;
        let checkpoint = match &config.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(format!("epoch_{epoch:03}"));
                save_checkpoint(&model, &path)?;
                Some(path.display().to_string())
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_total / train_idx.len() as f64,
            val_mae_sbp: mae.sbp,
            val_mae_dbp: mae.dbp,
            checkpoint,
        };
        let score = record.selection_metric();
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model.clone()));
        }
        epochs.push(record);
    }

    let best_epoch = TrainHistory::argmin(&epochs).expect("at least one epoch");
    let (_, best_model) = best.expect("at least one epoch");
    Ok((
        TrainedModel {
            model: best_model,
            best_epoch,
            baseline,
        },
        TrainHistory {
            epochs,
            best_epoch,
            learning_rate: lr,
        },
    ))
}
