use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{sigmoid, sigmoid_bce, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Scores at or above this are predicted positive.
pub const DECISION_THRESHOLD: f64 = 0.5;

const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_scores(scores: &[f64], positives: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&s, &p) in scores.iter().zip(positives) {
            match (s >= DECISION_THRESHOLD, p) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` when the dataset holds a single class.
    pub auc: Option<f64>,
    pub loss: f64,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn error_rate(&self) -> f64 {
        1.0 - self.accuracy
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic with mid-ranks, i.e.
/// `P(score⁺ > score⁻) + ½·P(tie)`. `None` if either class is absent.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positives.len());
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        let group_pos = order[i..=j].iter().filter(|&&k| positives[k]).count() as u128;
        twice_rank_sum += twice_mid * group_pos;
        i = j + 1;
    }
    let n_pos = n_pos as u128;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Some(twice_u as f64 / (2 * n_pos * n_neg as u128) as f64)
}

/// Inference-mode logits for every sample, in dataset order.
pub fn predict_logits(model: &Model, dataset: &[Sample]) -> Result<Vec<f32>> {
    let chunks: Vec<&[Sample]> = dataset.chunks(EVAL_BATCH).collect();
    let per_chunk = chunks
        .par_iter()
        .map(|chunk| {
            let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
            let x = Tensor::stack(&images)?;
            model
                .forward(&x, Mode::Eval, &mut Rng::new(0))
                .map(Tensor::into_data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_chunk.into_iter().flatten().collect())
}

pub fn evaluate(model: &Model, dataset: &[Sample]) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let logits = predict_logits(model, dataset)?;
    let positives: Vec<bool> = dataset.iter().map(|s| s.label.is_positive()).collect();
    metrics_from_logits(&logits, &positives)
}

pub fn metrics_from_logits(logits: &[f32], positives: &[bool]) -> Result<Metrics> {
    let n = logits.len();
    let scores: Vec<f64> = logits.iter().map(|&z| sigmoid(z as f64)).collect();
    let confusion = Confusion::from_scores(&scores, positives);
    let z = Tensor::new([n, 1, 1, 1], logits.to_vec())?;
    let y = Tensor::new(
        [n, 1, 1, 1],
        positives.iter().map(|&p| p as u8 as f32).collect(),
    )?;
    Ok(Metrics {
        accuracy: (confusion.tp + confusion.tn) as f64 / n as f64,
        auc: roc_auc(&scores, positives),
        loss: sigmoid_bce(&z, &y)?,
        confusion,
    })
}
