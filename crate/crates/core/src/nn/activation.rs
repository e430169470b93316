use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Masks `grad_out` by `input > 0`.
pub fn relu_backward(grad_out: &Tensor, cached_input: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("relu_backward", cached_input.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(cached_input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(cached_input.shape(), data)
}
