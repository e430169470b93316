use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Per-element multipliers applied by a training-mode dropout pass; `None` means the
/// pass was the identity.
pub type DropoutMask = Option<Vec<f32>>;

/// Inverted dropout: in training, zeroes each element with probability `rate` and scales
/// survivors by `1 / (1 - rate)`. Inference (or `rate == 0`) is the identity and draws
/// nothing from `rng`.
pub fn dropout(
    input: &Tensor,
    rate: f32,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Invalid(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..input.len())
        .map(|_| if rng.uniform_f32() < rate { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::new(input.shape(), data)?, Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: &DropoutMask) -> Result<Tensor> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(mask) => {
            if mask.len() != grad_out.len() {
                return Err(Error::shape(
                    "dropout_backward",
                    grad_out.shape(),
                    mask.len(),
                ));
            }
            let data = grad_out
                .data()
                .iter()
                .zip(mask)
                .map(|(g, m)| g * m)
                .collect();
            Tensor::new(grad_out.shape(), data)
        }
    }
}
