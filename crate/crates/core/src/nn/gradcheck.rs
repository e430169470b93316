//! Central-difference gradient checking for anything exposing forward/backward.

use super::{Layer, LayerParams, Mode, PoolMode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// A deterministic differentiable map `Tensor -> Tensor` with optional parameters.
pub trait Differentiable {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;

    /// Input gradient for cotangent `grad_out`; parameter gradients are accumulated.
    fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor>;

    fn params_mut(&mut self) -> Vec<&mut LayerParams> {
        Vec::new()
    }

    /// The same map evaluated in f64 from the current f32 inputs and parameters, if
    /// available. Finite differences use it to keep rounding noise out of the oracle.
    fn forward_wide(&mut self, _input: &Tensor) -> Option<Result<Vec<f64>>> {
        None
    }
}

impl Differentiable for Layer {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        // Eval mode keeps dropout deterministic.
        Layer::forward(self, input, Mode::Eval, &mut Rng::new(0)).map(|(y, _)| y)
    }

    fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        Layer::backward(self, input, &None, grad_out, true, true)
            .map(|g| g.expect("input grad requested"))
    }

    fn params_mut(&mut self) -> Vec<&mut LayerParams> {
        Layer::params_mut(self).into_iter().collect()
    }

    fn forward_wide(&mut self, input: &Tensor) -> Option<Result<Vec<f64>>> {
        let x: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
        Some(layer_forward_wide(self, input.shape(), &x).map(|(_, y)| y))
    }
}

/// Eval-mode forward of `layer` in f64 by direct loops, returning the output shape
/// and values.
pub fn layer_forward_wide(layer: &Layer, shape: Shape, x: &[f64]) -> Result<(Shape, Vec<f64>)> {
    let out_shape = layer.output_shape(shape)?;
    let [n, c, h, w] = shape;
    let plane = h * w;
    let y = match layer {
        Layer::Conv2d { params, .. } => {
            let [c_out, _, k, _] = params.weights.shape();
            let wt = params.weights.data();
            let pad = k / 2;
            let mut y = vec![0.0f64; n * c_out * plane];
            for b in 0..n {
                for co in 0..c_out {
                    let out = &mut y[(b * c_out + co) * plane..][..plane];
                    out.fill(params.bias[co] as f64);
                    for ci in 0..c {
                        let src = &x[(b * c + ci) * plane..][..plane];
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = wt[((co * c + ci) * k + ky) * k + kx] as f64;
                                // Output columns whose tap column ox + kx - pad is inside.
                                let x0 = pad.saturating_sub(kx);
                                let x1 = (w + pad).saturating_sub(kx).min(w);
                                for oy in 0..h {
                                    let iy = oy + ky;
                                    if iy < pad || iy - pad >= h || x0 >= x1 {
                                        continue;
                                    }
                                    let row = &src[(iy - pad) * w..][..w];
                                    let dst = &mut out[oy * w..][..w];
                                    for ox in x0..x1 {
                                        dst[ox] += wv * row[ox + kx - pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            y
        }
        Layer::Dense { params, .. } => {
            let [d, u, _, _] = params.weights.shape();
            let wt = params.weights.data();
            let mut y = vec![0.0f64; n * u];
            for b in 0..n {
                for j in 0..u {
                    y[b * u + j] = params.bias[j] as f64
                        + (0..d)
                            .map(|i| x[b * d + i] * wt[i * u + j] as f64)
                            .sum::<f64>();
                }
            }
            y
        }
        Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
        Layer::Flatten | Layer::Dropout { .. } => x.to_vec(),
        Layer::MaxPool2 => {
            let (oh, ow) = (h / 2, w / 2);
            let mut y = Vec::with_capacity(n * c * oh * ow);
            for p in x.chunks(plane) {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let at = |dy: usize, dx: usize| p[(2 * oy + dy) * w + 2 * ox + dx];
                        y.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
                    }
                }
            }
            y
        }
        Layer::GlobalPool(PoolMode::Avg) => x
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect(),
        Layer::GlobalPool(PoolMode::Max) => x
            .chunks(plane)
            .map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    };
    Ok((out_shape, y))
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Step is `step_scale * max(1, |x|)`.
    pub step_scale: f64,
    /// Smooth coordinates checked per tensor (input, each weight, each bias).
    pub samples_per_tensor: usize,
    /// Coordinates whose slopes over the four half-step segments of `[x - h, x + h]`
    /// disagree by more than this (relative) have a kink within one step and are
    /// skipped. Every map checked here is piecewise linear along one coordinate, so
    /// smooth coordinates agree up to rounding.
    pub kink_tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step_scale: 1e-2,
            samples_per_tensor: 32,
            kink_tolerance: 1e-6,
        }
    }
}

/// Inputs whose magnitudes are a shuffled grid in [0.1, 1] with random signs, so no
/// coordinate sits within one step of a ReLU kink or a pooling tie.
pub fn spread_input(shape: Shape, rng: &mut Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let mut mags: Vec<f32> = (0..len)
        .map(|i| 0.1 + 0.9 * (i as f32 + 0.5) / len.max(1) as f32)
        .collect();
    rng.shuffle(&mut mags);
    let data = mags
        .into_iter()
        .map(|m| if rng.bernoulli(0.5) { m } else { -m })
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Max relative error between analytic and central-difference gradients of the scalar
/// `sum(f(x) * g)` for random `x` of `input_shape` and random cotangent `g`.
pub fn gradient_check(
    layer: &mut dyn Differentiable,
    input_shape: Shape,
    rng: &mut Rng,
) -> Result<f64> {
    let input = spread_input(input_shape, rng);
    gradient_check_at(layer, &input, GradCheckOptions::default(), rng)
}

pub fn gradient_check_at(
    layer: &mut dyn Differentiable,
    input: &Tensor,
    opts: GradCheckOptions,
    rng: &mut Rng,
) -> Result<f64> {
    let out = layer.forward(input)?;
    let cotangent = Tensor::from_fn(out.shape(), |_| rng.range(-1.0, 1.0) as f32);

    for p in layer.params_mut() {
        p.zero_grad();
    }
    let grad_input = layer.backward(input, &cotangent)?;
    let param_grads: Vec<(Vec<f32>, Vec<f32>)> = layer
        .params_mut()
        .into_iter()
        .map(|p| (p.grad_weights.data().to_vec(), p.grad_bias.clone()))
        .collect();

    let objective = |layer: &mut dyn Differentiable, x: &Tensor| -> Result<f64> {
        let y = match layer.forward_wide(x) {
            Some(y) => y?,
            None => layer.forward(x)?.data().iter().map(|&v| v as f64).collect(),
        };
        Ok(y.iter()
            .zip(cotangent.data())
            .map(|(&a, &b)| a * b as f64)
            .sum())
    };

    let f0 = objective(layer, input)?;
    let mut worst = 0.0f64;

    let mut x = input.clone();
    let mut order = shuffled(x.len(), rng).into_iter();
    let mut checked = 0;
    while checked < opts.samples_per_tensor {
        let Some(i) = order.next() else { break };
        let probed = probe(opts, x.data()[i], f0, |v| {
            x.data_mut()[i] = v;
            objective(layer, &x)
        })?;
        x.data_mut()[i] = input.data()[i];
        if let Some(numeric) = probed {
            worst = worst.max(relative_error(grad_input.data()[i] as f64, numeric));
            checked += 1;
        }
    }
    ensure_checked("input", x.len(), checked)?;

    for (p, (gw, gb)) in param_grads.iter().enumerate() {
        for (is_bias, analytic) in [(false, gw), (true, gb)] {
            let mut checked = 0;
            for i in shuffled(analytic.len(), rng) {
                if checked == opts.samples_per_tensor {
                    break;
                }
                let original = read_param(layer, p, is_bias, i);
                let probed = probe(opts, original, f0, |v| {
                    write_param(layer, p, is_bias, i, v);
                    objective(layer, input)
                })?;
                write_param(layer, p, is_bias, i, original);
                if let Some(numeric) = probed {
                    worst = worst.max(relative_error(analytic[i] as f64, numeric));
                    checked += 1;
                }
            }
            ensure_checked(
                if is_bias { "bias" } else { "weights" },
                analytic.len(),
                checked,
            )?;
        }
    }
    Ok(worst)
}

fn ensure_checked(what: &str, len: usize, checked: usize) -> Result<()> {
    if len > 0 && checked == 0 {
        return Err(Error::Invalid(format!(
            "gradient check found no smooth coordinate among {len} {what} entries"
        )));
    }
    Ok(())
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[cfg(test)]
fn central_difference(
    opts: GradCheckOptions,
    value: f32,
    mut eval_at: impl FnMut(f32) -> Result<f64>,
) -> Result<f64> {
    let (plus, minus) = steps(opts, value);
    let f_plus = eval_at(plus)?;
    let f_minus = eval_at(minus)?;
    Ok((f_plus - f_minus) / (plus as f64 - minus as f64))
}

/// `value ± h`, rounded to f32; differences use the rounded points.
fn steps(opts: GradCheckOptions, value: f32) -> (f32, f32) {
    let h = opts.step_scale * (value.abs() as f64).max(1.0);
    ((value as f64 + h) as f32, (value as f64 - h) as f32)
}

/// Central difference at `value`, or `None` when a kink lies within one step.
fn probe(
    opts: GradCheckOptions,
    value: f32,
    f0: f64,
    mut eval_at: impl FnMut(f32) -> Result<f64>,
) -> Result<Option<f64>> {
    let (plus, minus) = steps(opts, value);
    let half = GradCheckOptions {
        step_scale: opts.step_scale / 2.0,
        ..opts
    };
    let (half_plus, half_minus) = steps(half, value);
    let points = [minus, half_minus, value, half_plus, plus];
    let mut values = [0.0f64; 5];
    for (v, &at) in values.iter_mut().zip(&points) {
        *v = if at == value { f0 } else { eval_at(at)? };
    }
    let slopes: Vec<f64> = (0..4)
        .map(|s| (values[s + 1] - values[s]) / (points[s + 1] as f64 - points[s] as f64))
        .collect();
    let (lo, hi) = slopes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let scale = slopes.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
    if hi - lo > opts.kink_tolerance * scale {
        return Ok(None);
    }
    Ok(Some((values[4] - values[0]) / (plus as f64 - minus as f64)))
}

fn shuffled(len: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut idx);
    idx
}

fn read_param(layer: &mut dyn Differentiable, p: usize, is_bias: bool, i: usize) -> f32 {
    let params = layer.params_mut().swap_remove(p);
    if is_bias {
        params.bias[i]
    } else {
        params.weights.data()[i]
    }
}

fn write_param(layer: &mut dyn Differentiable, p: usize, is_bias: bool, i: usize, v: f32) {
    let params = layer.params_mut().swap_remove(p);
    if is_bias {
        params.bias[i] = v;
    } else {
        params.weights.data_mut()[i] = v;
    }
}
