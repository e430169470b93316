use serde::{Deserialize, Serialize};

use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam()
    }
}

/// Per-buffer optimizer memory: velocity for SGD, first/second moments for Adam.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotState {
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

impl SlotState {
    pub fn new(len: usize) -> Self {
        SlotState {
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }
}

/// One update of `params` from `grads`. `step` is 1-based (Adam bias correction).
///
/// SGD with momentum: `v ← μv − η·g; w ← w + v`.
pub fn optimizer_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut SlotState,
    kind: &OptimizerKind,
    learning_rate: f64,
    step: u64,
) {
    assert_eq!(
        params.len(),
        grads.len(),
        "parameter and gradient lengths differ"
    );
    if state.first.len() != params.len() {
        *state = SlotState::new(params.len());
    }
    match *kind {
        OptimizerKind::Sgd { momentum } => {
            for ((w, &g), v) in params.iter_mut().zip(grads).zip(state.first.iter_mut()) {
                let nv = momentum * *v as f64 - learning_rate * g as f64;
                *v = nv as f32;
                *w += *v;
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let t = step.max(1) as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((w, &g), m), v) in params
                .iter_mut()
                .zip(grads)
                .zip(state.first.iter_mut())
                .zip(state.second.iter_mut())
            {
                let g = g as f64;
                let nm = beta1 * *m as f64 + (1.0 - beta1) * g;
                let nv = beta2 * *v as f64 + (1.0 - beta2) * g * g;
                *m = nm as f32;
                *v = nv as f32;
                let update = learning_rate * (nm / c1) / ((nv / c2).sqrt() + eps);
                *w = (*w as f64 - update) as f32;
            }
        }
    }
}

/// Optimizer over every parameter buffer of a model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    slots: Vec<(SlotState, SlotState)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies the accumulated gradients of `model`.
    pub fn step(&mut self, model: &mut Model) {
        self.step += 1;
        let params = model.params_mut();
        if self.slots.len() != params.len() {
            self.slots = params
                .iter()
                .map(|p| {
                    (
                        SlotState::new(p.weights.len()),
                        SlotState::new(p.bias.len()),
                    )
                })
                .collect();
        }
        for (p, (sw, sb)) in params.into_iter().zip(self.slots.iter_mut()) {
            optimizer_step(
                p.weights.data_mut(),
                p.grad_weights.data(),
                sw,
                &self.kind,
                self.learning_rate,
                self.step,
            );
            optimizer_step(
                &mut p.bias,
                &p.grad_bias,
                sb,
                &self.kind,
                self.learning_rate,
                self.step,
            );
        }
    }
}
