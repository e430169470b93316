//! Truncated VGG16 classifiers: construction, parameter counting and execution.

mod config;
mod weights;

pub use config::{Head, ModelConfig, HIDDEN_RANGE, VGG16_BLOCKS};
pub use weights::{load_weights, read_weights, save_weights, WeightFile, WEIGHT_FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::nn::gradcheck::{layer_forward_wide, Differentiable};
use crate::nn::{DropoutMask, Layer, LayerParams, Mode};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// Shape plan for one layer, before any parameters are allocated.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LayerSpec {
    Conv {
        name: String,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    },
    Dense {
        name: String,
        d_in: usize,
        units: usize,
    },
    Other(Layer),
}

impl LayerSpec {
    fn num_params(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                c_in,
                c_out,
                kernel,
                ..
            } => (kernel * kernel * c_in + 1) * c_out,
            LayerSpec::Dense { d_in, units, .. } => (d_in + 1) * units,
            LayerSpec::Other(_) => 0,
        }
    }
}

pub(crate) fn layer_plan(config: &ModelConfig) -> Result<Vec<LayerSpec>> {
    config.validate()?;
    let mut plan = Vec::new();
    let mut channels = 3;
    for (b, widths) in VGG16_BLOCKS[..config.blocks].iter().enumerate() {
        for (i, &width) in widths.iter().enumerate() {
            plan.push(LayerSpec::Conv {
                name: format!("block{}_conv{}", b + 1, i + 1),
                c_in: channels,
                c_out: width,
                kernel: 3,
            });
            plan.push(LayerSpec::Other(Layer::Relu));
            channels = width;
        }
        plan.push(LayerSpec::Other(Layer::MaxPool2));
    }
    let hidden = config.head.hidden();
    match config.head {
        Head::Flatten { .. } => {
            plan.push(LayerSpec::Other(Layer::Flatten));
            plan.push(LayerSpec::Dense {
                name: "dense_hidden".into(),
                d_in: config.flatten_dim(),
                units: hidden,
            });
        }
        Head::Conv {
            pool_mode,
            conv_width,
            ..
        } => {
            plan.push(LayerSpec::Conv {
                name: "head_conv".into(),
                c_in: channels,
                c_out: conv_width,
                kernel: 1,
            });
            plan.push(LayerSpec::Other(Layer::Relu));
            plan.push(LayerSpec::Other(Layer::GlobalPool(pool_mode)));
            plan.push(LayerSpec::Dense {
                name: "dense_hidden".into(),
                d_in: conv_width,
                units: hidden,
            });
        }
    }
    plan.push(LayerSpec::Other(Layer::Relu));
    plan.push(LayerSpec::Other(Layer::Dropout {
        rate: config.dropout_rate,
    }));
    plan.push(LayerSpec::Dense {
        name: "dense_out".into(),
        d_in: hidden,
        units: 1,
    });
    Ok(plan)
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
fn he_uniform(shape: Shape, fan_in: usize, bias: usize, rng: &mut Rng) -> LayerParams {
    let bound = (6.0 / fan_in as f64).sqrt();
    let weights = Tensor::from_fn(shape, |_| rng.range(-bound, bound) as f32);
    LayerParams::new(weights, vec![0.0; bias])
}

/// Every forward input kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[i]` is the input of layer `i`.
    pub inputs: Vec<Tensor>,
    masks: Vec<DropoutMask>,
    pub output: Tensor,
}

impl Trace {
    /// Output of layer `i`.
    pub fn activation(&self, i: usize) -> &Tensor {
        self.inputs.get(i + 1).unwrap_or(&self.output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<Layer>,
    taps: Vec<usize>,
}

/// Builds the layer stack for `config` with freshly initialized parameters.
pub fn build_model(config: &ModelConfig, rng: &mut Rng) -> Result<Model> {
    let plan = layer_plan(config)?;
    let mut layers = Vec::with_capacity(plan.len());
    let mut taps = Vec::with_capacity(config.blocks);
    for spec in plan {
        let layer = match spec {
            LayerSpec::Conv {
                name,
                c_in,
                c_out,
                kernel,
            } => Layer::Conv2d {
                name,
                params: he_uniform(
                    [c_out, c_in, kernel, kernel],
                    c_in * kernel * kernel,
                    c_out,
                    rng,
                ),
            },
            LayerSpec::Dense { name, d_in, units } => Layer::Dense {
                name,
                params: he_uniform([d_in, units, 1, 1], d_in, units, rng),
            },
            LayerSpec::Other(layer) => layer,
        };
        if matches!(layer, Layer::MaxPool2) {
            taps.push(layers.len());
        }
        layers.push(layer);
    }
    Ok(Model {
        config: *config,
        layers,
        taps,
    })
}

/// Total weight and bias elements across all layers.
pub fn count_params(model: &Model) -> usize {
    model.layers.iter().map(Layer::num_params).sum()
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        count_params(self)
    }

    /// Mutable access to every parameterized layer, in stack order.
    pub fn params_mut(&mut self) -> Vec<&mut LayerParams> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .collect()
    }

    pub fn params(&self) -> Vec<&LayerParams> {
        self.layers.iter().filter_map(Layer::params).collect()
    }

    /// Named parameter tensors `(name, weights, bias)` in stack order.
    pub fn named_params(&self) -> Vec<(&str, &LayerParams)> {
        self.layers
            .iter()
            .filter_map(|l| Some((l.name()?, l.params()?)))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Index of the layer whose output is the feature tap of `block` (1-based): the
    /// rectified, pooled output of that block's last conv.
    pub fn tap_layer(&self, block: usize) -> Result<usize> {
        if block == 0 || block > self.taps.len() {
            return Err(Error::Invalid(format!(
                "tap {block} does not exist; this model has taps 1..={}",
                self.taps.len()
            )));
        }
        Ok(self.taps[block - 1])
    }

    pub fn tap_shape(&self, block: usize) -> Result<Shape> {
        self.tap_layer(block)?;
        let size = self.config.input_size >> block;
        Ok([
            1,
            VGG16_BLOCKS[block - 1].last().copied().unwrap_or(0),
            size,
            size,
        ])
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        [batch, 3, self.config.input_size, self.config.input_size]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [n, ..] = x.shape();
        x.expect_shape("model input", self.input_shape(n))
    }

    /// Logits of shape (N, 1, 1, 1).
    pub fn forward(&self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        self.check_input(x)?;
        self.forward_from(0, x.clone(), mode, rng)
    }

    /// Runs `layers[start..]` on `x`, which must be the input expected by layer `start`.
    pub fn forward_from(
        &self,
        start: usize,
        mut x: Tensor,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        for layer in &self.layers[start..] {
            x = layer.forward(&x, mode, rng)?.0;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, mask) = layer.forward(&cur, mode, rng)?;
            inputs.push(cur);
            masks.push(mask);
            cur = next;
        }
        Ok(Trace {
            inputs,
            masks,
            output: cur,
        })
    }

    /// Backpropagates `grad_logits`, accumulating every parameter gradient.
    pub fn backward(&mut self, trace: &Trace, grad_logits: &Tensor) -> Result<()> {
        self.backward_impl(trace, grad_logits, false).map(|_| ())
    }

    fn backward_impl(
        &mut self,
        trace: &Trace,
        grad_logits: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        grad_logits.expect_shape("model backward", trace.output.shape())?;
        let mut grad = grad_logits.clone();
        for i in (0..self.layers.len()).rev() {
            let need = i > 0 || need_input_grad;
            match self.layers[i].backward(&trace.inputs[i], &trace.masks[i], &grad, true, need)? {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }

    /// Gradient of the output with respect to the output of layer `layer`, leaving
    /// parameter gradients untouched.
    pub fn activation_gradient(
        &self,
        trace: &Trace,
        grad_logits: &Tensor,
        layer: usize,
    ) -> Result<Tensor> {
        grad_logits.expect_shape("activation_gradient", trace.output.shape())?;
        let mut grad = grad_logits.clone();
        for i in (layer + 1..self.layers.len()).rev() {
            grad = self.layers[i].input_grad(&trace.inputs[i], &trace.masks[i], &grad)?;
        }
        Ok(grad)
    }
}

/// End-to-end check target: inference-mode logits as a function of the image.
impl Differentiable for Model {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        Model::forward(self, input, Mode::Eval, &mut Rng::new(0))
    }

    fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let trace = self.forward_trace(input, Mode::Eval, &mut Rng::new(0))?;
        self.backward_impl(&trace, grad_out, true)
            .map(|g| g.expect("input grad requested"))
    }

    fn params_mut(&mut self) -> Vec<&mut LayerParams> {
        Model::params_mut(self)
    }

    fn forward_wide(&mut self, input: &Tensor) -> Option<Result<Vec<f64>>> {
        let run = || {
            let mut shape = input.shape();
            let mut x: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
            for layer in &self.layers {
                (shape, x) = layer_forward_wide(layer, shape, &x)?;
            }
            Ok(x)
        };
        Some(run())
    }
}
