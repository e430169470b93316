//! Mini-batch training and evaluation.

mod metrics;
mod optim;

pub use metrics::{
    evaluate, metrics_from_logits, predict_logits, roc_auc, Confusion, Metrics, DECISION_THRESHOLD,
};
pub use optim::{optimizer_step, Optimizer, OptimizerKind, SlotState};

use std::fmt::Write as _;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{sigmoid_bce, sigmoid_bce_backward, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 16,
            optimizer: OptimizerKind::default(),
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        // lr = 0 is allowed: it freezes every parameter.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Invalid(format!(
                "learning rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Measured on the augmented batches with dropout active.
    pub train_accuracy: f64,
    pub validation: Option<Metrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,train_loss,train_acc,val_acc,val_auc`; validation fields are empty when
    /// no validation set was given and AUC is `undefined` for single-class sets.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc,val_auc\n");
        for r in &self.epochs {
            let (acc, auc) = match &r.validation {
                Some(m) => (format!("{:.6}", m.accuracy), fmt_auc(m.auc)),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{acc},{auc}",
                r.epoch, r.train_loss, r.train_accuracy
            );
        }
        out
    }
}

pub fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "undefined".to_string(), |a| format!("{a:.6}"))
}

/// Trains `model` in place. Results are bit-identical for a fixed seed regardless of
/// the thread count: augmentation streams are derived per (epoch, sample) and all
/// gradient reductions run in a fixed order.
pub fn train(
    mut model: Model,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Model, History)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let expected = model.input_shape(1);
    if let Some(bad) = train_set
        .iter()
        .chain(val_set)
        .find(|s| s.image.shape() != expected)
    {
        return Err(Error::shape(
            "training sample vs model input",
            bad.image.shape(),
            expected,
        ));
    }

    let mut rng = Rng::new(cfg.seed);
    let augment_root = Rng::new(cfg.seed).fork(u64::MAX);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut history = History::default();
    let n = train_set.len();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;

        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<Sample> = idx
                .par_iter()
                .map(|&i| {
                    let mut srng = augment_root.fork((epoch * n + i) as u64);
                    augment(&train_set[i], &cfg.augment, &mut srng)
                })
                .collect();
            let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
            let x = Tensor::stack(&images)?;
            let y = Tensor::new(
                [idx.len(), 1, 1, 1],
                samples.iter().map(|s| s.label.as_f32()).collect(),
            )?;

            model.zero_grad();
            let trace = model.forward_trace(&x, Mode::Train, &mut rng)?;
            let loss = sigmoid_bce(&trace.output, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch,
                    loss,
                });
            }
            let grad = sigmoid_bce_backward(&trace.output, &y)?;
            model.backward(&trace, &grad)?;
            optimizer.step(&mut model);

            loss_sum += loss * idx.len() as f64;
            correct += trace
                .output
                .data()
                .iter()
                .zip(y.data())
                .filter(|(&z, &t)| (z >= 0.0) == (t == 1.0))
                .count();
        }

        let validation = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, val_set)?)
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            validation,
        };
        info!(
            "epoch {:>3}: loss {:.4} acc {:.3}{}",
            record.epoch,
            record.train_loss,
            record.train_accuracy,
            record
                .validation
                .as_ref()
                .map(|m| format!(" | val acc {:.3} auc {}", m.accuracy, fmt_auc(m.auc)))
                .unwrap_or_default()
        );
        history.epochs.push(record);
    }
    Ok((model, history))
}
