//! Plain (unmasked) SGD training.
//!
//! This is the reference the masked trainer is measured against, so the two
//! share every piece of run discipline that could otherwise drift: the epoch
//! shuffle, the batch chunking (trailing short batches are dropped), the
//! `lr/batch` update rule, and the per-epoch evaluation. Optimizer is plain
//! SGD — no momentum, no weight decay — to keep the masked/plain equivalence
//! claim sharp.

use serde::{Deserialize, Serialize};

use crate::dataset::{shuffle, Dataset};
use crate::error::{Error, Result};
use crate::nn::loss::argmax;
use crate::nn::model::Model;
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional hard cap on SGD steps across all epochs (for short
    /// equivalence runs); `None` means run every epoch to completion.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub precision: Precision,
    pub seed: u64,
    /// Snapshot all parameters after every step. Only sensible for tiny
    /// models; used by the trainer-equivalence checks.
    #[serde(default)]
    pub track_trajectory: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    /// `None` when no validation split was configured.
    pub val_acc: Option<f64>,
    pub integrity_failures: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
    /// One snapshot per step when `track_trajectory` is set.
    pub trajectory: Vec<Vec<Tensor>>,
    pub integrity_failures: usize,
}

/// The sample order for one epoch: a seeded Fisher-Yates shuffle, identical
/// for every trainer that shares the config seed.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::chacha(
        crate::rng::mix(seed, crate::rng::stream::DATA_ORDER),
        epoch as u64,
    );
    shuffle(&mut idx, &mut rng);
    idx
}

/// Mean loss and accuracy over a dataset.
pub fn evaluate(model: &Model, data: &Dataset, prec: Precision) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        let logits = model.forward(x, prec)?;
        let (loss, _) = model.loss_and_dlogits(&logits, y)?;
        loss_sum += loss;
        if argmax(&logits) == y {
            hits += 1;
        }
    }
    Ok((loss_sum / data.len() as f64, hits as f64 / data.len() as f64))
}

pub fn train_plaintext(
    model: &mut Model,
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport {
        epochs: Vec::new(),
        steps: 0,
        trajectory: Vec::new(),
        integrity_failures: 0,
    };
    let epochs = effective_epochs(cfg, train.len());
    'outer: for epoch in 0..epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        for batch in order.chunks_exact(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break 'outer;
            }
            let mut grads = model.zero_grads();
            for &i in batch {
                let (logits, caches) = model.forward_cached(&train.xs[i], cfg.precision)?;
                let (loss, dlogits) = model.loss_and_dlogits(&logits, train.ys[i])?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { step: report.steps });
                }
                model.backward_accumulate(&caches, &dlogits, cfg.precision, &mut grads)?;
            }
            model.apply_grads(&grads, cfg.learning_rate, batch.len(), cfg.precision)?;
            report.steps += 1;
            if cfg.track_trajectory {
                report.trajectory.push(model.snapshot());
            }
        }
        let (loss, train_acc) = evaluate(model, train, cfg.precision)?;
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(evaluate(model, val, cfg.precision)?.1)
        };
        report.epochs.push(EpochMetrics {
            epoch,
            loss,
            train_acc,
            val_acc,
            integrity_failures: 0,
        });
    }
    Ok(report)
}

/// When a step cap is given with `epochs = 0`, run as many epochs as the cap
/// needs; shared by both trainers so their loop bounds agree.
pub fn effective_epochs(cfg: &TrainConfig, n_train: usize) -> usize {
    match (cfg.epochs, cfg.max_steps) {
        (0, Some(m)) => {
            let per_epoch = (n_train / cfg.batch_size).max(1);
            m.div_ceil(per_epoch)
        }
        (e, _) => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_blobs;
    use crate::nn::layer::LayerSpec;

    fn blob_setup(seed: u64) -> (Model, Dataset) {
        let data = synthetic_blobs(2, 8, 60, 4.0, 21).unwrap();
        let model = Model::init(
            vec![
                LayerSpec::Dense { in_dim: 8, out_dim: 12 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 12, out_dim: 2 },
            ],
            &[8],
            seed,
        )
        .unwrap();
        (model, data)
    }

    #[test]
    fn blobs_reach_high_train_accuracy_within_200_steps() {
        let (mut model, data) = blob_setup(1);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 4,
            epochs: 0,
            max_steps: Some(200),
            precision: Precision::F64,
            seed: 9,
            track_trajectory: false,
        };
        let report = train_plaintext(&mut model, &cfg, &data, &Dataset {
            xs: vec![],
            ys: vec![],
            n_classes: 2,
        })
        .unwrap();
        assert_eq!(report.steps, 200);
        let (_, acc) = evaluate(&model, &data, Precision::F64).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc} below 0.99");
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let (mut model, data) = blob_setup(2);
        let before = model.snapshot();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            epochs: 1,
            max_steps: None,
            precision: Precision::F64,
            seed: 3,
            track_trajectory: false,
        };
        train_plaintext(&mut model, &cfg, &data, &data).unwrap();
        assert_eq!(model.snapshot(), before);
    }

    #[test]
    fn same_seed_reproduces_the_exact_trajectory() {
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 4,
            epochs: 2,
            max_steps: None,
            precision: Precision::F64,
            seed: 5,
            track_trajectory: true,
        };
        let (mut m1, data) = blob_setup(4);
        let (mut m2, _) = blob_setup(4);
        let empty = Dataset { xs: vec![], ys: vec![], n_classes: 2 };
        let r1 = train_plaintext(&mut m1, &cfg, &data, &empty).unwrap();
        let r2 = train_plaintext(&mut m2, &cfg, &data, &empty).unwrap();
        assert_eq!(r1.trajectory, r2.trajectory);
        assert_eq!(r1.epochs, r2.epochs);
    }

    #[test]
    fn trailing_partial_batches_are_dropped() {
        let (mut model, mut data) = blob_setup(6);
        data.xs.truncate(10);
        data.ys.truncate(10);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 4,
            epochs: 3,
            max_steps: None,
            precision: Precision::F64,
            seed: 1,
            track_trajectory: false,
        };
        let empty = Dataset { xs: vec![], ys: vec![], n_classes: 2 };
        let report = train_plaintext(&mut model, &cfg, &data, &empty).unwrap();
        // 10 samples / batch 4 -> 2 full batches per epoch.
        assert_eq!(report.steps, 6);
    }
}
