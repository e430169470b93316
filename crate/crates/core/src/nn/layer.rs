use super::conv::{conv2d_backward_raw, conv2d_forward};
use super::dense::{dense_backward_raw, dense_forward};
use super::{
    dropout, dropout_backward, global_pool, global_pool_backward, maxpool2, maxpool2_backward,
    relu, relu_backward, DropoutMask, LayerParams, PoolMode,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One stage of a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d { name: String, params: LayerParams },
    Relu,
    MaxPool2,
    GlobalPool(PoolMode),
    Flatten,
    Dense { name: String, params: LayerParams },
    Dropout { rate: f32 },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2 => "maxpool2",
            Layer::GlobalPool(PoolMode::Avg) => "global_avg_pool",
            Layer::GlobalPool(PoolMode::Max) => "global_max_pool",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Dropout { .. } => "dropout",
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Layer::Conv2d { name, .. } | Layer::Dense { name, .. } => Some(name),
            _ => None,
        }
    }

    pub fn params(&self) -> Option<&LayerParams> {
        match self {
            Layer::Conv2d { params, .. } | Layer::Dense { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams> {
        match self {
            Layer::Conv2d { params, .. } | Layer::Dense { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().map_or(0, LayerParams::num_params)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let [n, c, h, w] = input;
        match self {
            Layer::Conv2d { params, .. } => {
                let [c_out, c_in, _, _] = params.weights.shape();
                if c != c_in {
                    return Err(Error::shape(
                        "conv2d input vs weights",
                        input,
                        params.weights.shape(),
                    ));
                }
                Ok([n, c_out, h, w])
            }
            Layer::Relu | Layer::Dropout { .. } => Ok(input),
            Layer::MaxPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Invalid(format!(
                        "maxpool2 needs even height and width, got {h}x{w}"
                    )));
                }
                Ok([n, c, h / 2, w / 2])
            }
            Layer::GlobalPool(_) => Ok([n, c, 1, 1]),
            Layer::Flatten => Ok([n, c * h * w, 1, 1]),
            Layer::Dense { params, .. } => {
                let [d, u, _, _] = params.weights.shape();
                if c * h * w != d {
                    return Err(Error::shape(
                        "dense input vs weights",
                        input,
                        params.weights.shape(),
                    ));
                }
                Ok([n, u, 1, 1])
            }
        }
    }

    pub fn forward(
        &self,
        input: &Tensor,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, DropoutMask)> {
        let out = match self {
            Layer::Conv2d { params, .. } => conv2d_forward(input, &params.weights, &params.bias)?,
            Layer::Relu => relu(input),
            Layer::MaxPool2 => maxpool2(input)?,
            Layer::GlobalPool(mode) => global_pool(input, *mode)?,
            Layer::Flatten => {
                let [n, c, h, w] = input.shape();
                input.clone().reshape([n, c * h * w, 1, 1])?
            }
            Layer::Dense { params, .. } => dense_forward(input, &params.weights, &params.bias)?,
            Layer::Dropout { rate } => return dropout(input, *rate, rng, mode == Mode::Train),
        };
        Ok((out, None))
    }

    /// Backward through this layer. Parameter gradients are accumulated when
    /// `accumulate` is set; the input gradient is skipped when not needed.
    pub fn backward(
        &mut self,
        input: &Tensor,
        mask: &DropoutMask,
        grad_out: &Tensor,
        accumulate: bool,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        match self {
            Layer::Conv2d { params, .. } => {
                if accumulate {
                    let (w, sink) = params.split();
                    conv2d_backward_raw(grad_out, input, w, Some(sink), need_input_grad)
                } else {
                    conv2d_backward_raw(grad_out, input, &params.weights, None, need_input_grad)
                }
            }
            Layer::Dense { params, .. } => {
                if accumulate {
                    let (w, sink) = params.split();
                    dense_backward_raw(grad_out, input, w, Some(sink), need_input_grad)
                } else {
                    dense_backward_raw(grad_out, input, &params.weights, None, need_input_grad)
                }
            }
            other => {
                if need_input_grad {
                    other.input_grad(input, mask, grad_out).map(Some)
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Input gradient without touching any parameter gradients.
    pub fn input_grad(
        &self,
        input: &Tensor,
        mask: &DropoutMask,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        match self {
            Layer::Conv2d { params, .. } => {
                conv2d_backward_raw(grad_out, input, &params.weights, None, true)
                    .map(|g| g.expect("input grad requested"))
            }
            Layer::Dense { params, .. } => {
                dense_backward_raw(grad_out, input, &params.weights, None, true)
                    .map(|g| g.expect("input grad requested"))
            }
            Layer::Relu => relu_backward(grad_out, input),
            Layer::MaxPool2 => maxpool2_backward(grad_out, input),
            Layer::GlobalPool(mode) => global_pool_backward(grad_out, input, *mode),
            Layer::Flatten => {
                if grad_out.len() != input.len() {
                    return Err(Error::shape(
                        "flatten backward",
                        grad_out.shape(),
                        input.shape(),
                    ));
                }
                grad_out.clone().reshape(input.shape())
            }
            Layer::Dropout { .. } => dropout_backward(grad_out, mask),
        }
    }
}
