//! Differentiable layer primitives over NCHW tensors.
//!
//! Every op has a forward function and a backward function that takes the cached
//! forward input. Parameter gradients are accumulated (added) into [`LayerParams`].

mod activation;
mod conv;
mod dense;
mod dropout;
pub mod gradcheck;
mod layer;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d, conv2d_backward};
pub use dense::{dense, dense_backward};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use gradcheck::{
    gradient_check, gradient_check_at, layer_forward_wide, relative_error, spread_input,
    Differentiable, GradCheckOptions,
};
pub use layer::{Layer, Mode};
pub use loss::{sigmoid, sigmoid_bce, sigmoid_bce_backward};
pub use pool::{global_pool, global_pool_backward, maxpool2, maxpool2_backward, PoolMode};

use crate::tensor::{Shape, Tensor};

/// Trainable weights and bias of one layer together with their accumulated gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Vec<f32>,
    pub grad_weights: Tensor,
    pub grad_bias: Vec<f32>,
}

impl LayerParams {
    pub fn new(weights: Tensor, bias: Vec<f32>) -> Self {
        let grad_weights = Tensor::zeros(weights.shape());
        let grad_bias = vec![0.0; bias.len()];
        LayerParams {
            weights,
            bias,
            grad_weights,
            grad_bias,
        }
    }

    pub fn zeros(weight_shape: Shape, bias_len: usize) -> Self {
        LayerParams::new(Tensor::zeros(weight_shape), vec![0.0; bias_len])
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.data_mut().fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Splits into read-only parameters and a mutable gradient sink.
    pub(crate) fn split(&mut self) -> (&Tensor, GradSink<'_>) {
        (
            &self.weights,
            GradSink {
                weights: self.grad_weights.data_mut(),
                bias: &mut self.grad_bias,
            },
        )
    }
}

/// Destination for accumulated parameter gradients.
pub(crate) struct GradSink<'a> {
    pub weights: &'a mut [f32],
    pub bias: &'a mut [f32],
}

/// `c = a · b` (row-major, `a` is m×k, `b` is k×n), with optional accumulation into `c`.
pub(crate) fn matmul(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_transposed: bool,
    b: &[f32],
    b_transposed: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above describe exactly the m×k, k×n and m×n row-major
    // buffers whose lengths are checked by the debug assertions.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c += aᵀ · b` for row-major `a` (k×m) and `b` (k×n), accumulated in f64 and
/// rounded once into `c` (m×n).
pub(crate) fn matmul_tn_wide(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0f64; m * n];
    // SAFETY: `a` is read as its transpose (m×k, strides 1 and m), `b` as k×n and
    // `out` as m×n, all row-major buffers of the asserted lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    for (acc, v) in c.iter_mut().zip(out) {
        *acc = (*acc as f64 + v) as f32;
    }
}
