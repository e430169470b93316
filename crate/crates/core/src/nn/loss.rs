use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check(logits: &Tensor, labels: &Tensor) -> Result<()> {
    if logits.item_len() != 1 {
        return Err(Error::shape("sigmoid_bce logits", logits.shape(), "(N, 1)"));
    }
    logits.expect_shape("sigmoid_bce labels", labels.shape())?;
    if let Some(bad) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Invalid(format!("label must be 0 or 1, got {bad}")));
    }
    Ok(())
}

/// Mean binary cross-entropy of single-logit predictions, in the stable form
/// `max(z, 0) - z·y + ln(1 + e^{-|z|})`.
pub fn sigmoid_bce(logits: &Tensor, labels: &Tensor) -> Result<f64> {
    check(logits, labels)?;
    let n = logits.batch().max(1) as f64;
    let total: f64 = logits
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&z, &y)| {
            let (z, y) = (z as f64, y as f64);
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        })
        .sum();
    Ok(total / n)
}

/// Gradient of [`sigmoid_bce`] with respect to the logits: `(σ(z) - y) / N`.
pub fn sigmoid_bce_backward(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    check(logits, labels)?;
    let n = logits.batch().max(1) as f64;
    let data = logits
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&z, &y)| ((sigmoid(z as f64) - y as f64) / n) as f32)
        .collect();
    Tensor::new(logits.shape(), data)
}
