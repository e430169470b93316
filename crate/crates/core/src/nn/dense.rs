use super::{matmul, matmul_tn_wide, GradSink, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fully connected layer `y = x·W + b`. `input` is read as (N, D) from its item
/// layout; weights have shape (D, U, 1, 1); output is (N, U, 1, 1).
pub fn dense(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    dense_forward(input, &params.weights, &params.bias)
}

pub fn dense_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    params: &mut LayerParams,
) -> Result<Tensor> {
    let (weights, sink) = params.split();
    dense_backward_raw(grad_out, cached_input, weights, Some(sink), true)
        .map(|g| g.expect("input grad requested"))
}

fn dims(input: &Tensor, weights: &Tensor, bias_len: usize) -> Result<(usize, usize, usize)> {
    let [d, u, a, b] = weights.shape();
    if a != 1 || b != 1 || bias_len != u {
        return Err(Error::shape(
            "dense weights vs bias",
            weights.shape(),
            bias_len,
        ));
    }
    if input.item_len() != d {
        return Err(Error::shape(
            "dense input vs weights",
            input.shape(),
            weights.shape(),
        ));
    }
    Ok((input.batch(), d, u))
}

pub(crate) fn dense_forward(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (n, d, u) = dims(input, weights, bias.len())?;
    let mut out = Vec::with_capacity(n * u);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    matmul(
        n,
        d,
        u,
        input.data(),
        false,
        weights.data(),
        false,
        &mut out,
        true,
    );
    Tensor::new([n, u, 1, 1], out)
}

pub(crate) fn dense_backward_raw(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    sink: Option<GradSink<'_>>,
    need_input_grad: bool,
) -> Result<Option<Tensor>> {
    let (n, d, u) = dims(input, weights, weights.shape()[1])?;
    if grad_out.batch() != n || grad_out.item_len() != u {
        return Err(Error::shape(
            "dense_backward grad_out",
            grad_out.shape(),
            [n, u, 1, 1],
        ));
    }
    if let Some(sink) = sink {
        matmul_tn_wide(d, n, u, input.data(), grad_out.data(), sink.weights);
        for (j, acc) in sink.bias.iter_mut().enumerate() {
            *acc += (0..n)
                .map(|i| grad_out.data()[i * u + j] as f64)
                .sum::<f64>() as f32;
        }
    }
    if !need_input_grad {
        return Ok(None);
    }
    let mut gx = vec![0.0f32; n * d];
    matmul(
        n,
        u,
        d,
        grad_out.data(),
        false,
        weights.data(),
        true,
        &mut gx,
        false,
    );
    Tensor::new(input.shape(), gx).map(Some)
}
