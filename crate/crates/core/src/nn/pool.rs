use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

impl std::fmt::Display for PoolMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolMode::Avg => "avg",
            PoolMode::Max => "max",
        })
    }
}

impl std::str::FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(PoolMode::Avg),
            "max" => Ok(PoolMode::Max),
            other => Err(Error::Invalid(format!(
                "unknown pool mode `{other}` (expected avg or max)"
            ))),
        }
    }
}

fn check_even(input: &Tensor) -> Result<()> {
    let [_, _, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Invalid(format!(
            "maxpool2 needs even height and width, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Index (within the plane) of the maximum of each 2×2 window; ties go to the first
/// element in row-major order.
fn window_argmax(plane: &[f32], w: usize, oy: usize, ox: usize) -> usize {
    let base = 2 * oy * w + 2 * ox;
    let mut best = base;
    for idx in [base + 1, base + w, base + w + 1] {
        if plane[idx] > plane[best] {
            best = idx;
        }
    }
    best
}

/// 2×2 max pooling with stride 2.
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    check_even(input)?;
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in input.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(plane[window_argmax(plane, w, oy, ox)]);
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

pub fn maxpool2_backward(grad_out: &Tensor, cached_input: &Tensor) -> Result<Tensor> {
    check_even(cached_input)?;
    let [n, c, h, w] = cached_input.shape();
    let (oh, ow) = (h / 2, w / 2);
    grad_out.expect_shape("maxpool2_backward", [n, c, oh, ow])?;
    let mut grad = Tensor::zeros(cached_input.shape());
    for (p, (plane, gplane)) in cached_input
        .data()
        .chunks(h * w)
        .zip(grad.data_mut().chunks_mut(h * w))
        .enumerate()
    {
        let g = &grad_out.data()[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                gplane[window_argmax(plane, w, oy, ox)] += g[oy * ow + ox];
            }
        }
    }
    Ok(grad)
}

/// Reduces every channel plane to one value.
pub fn global_pool(input: &Tensor, mode: PoolMode) -> Result<Tensor> {
    let [n, c, h, w] = input.shape();
    if h == 0 || w == 0 {
        return Err(Error::Invalid(
            "global_pool needs a non-empty spatial map".into(),
        ));
    }
    let out = input
        .data()
        .chunks(h * w)
        .map(|plane| match mode {
            PoolMode::Avg => {
                (plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64) as f32
            }
            PoolMode::Max => plane[first_argmax(plane)],
        })
        .collect();
    Tensor::new([n, c, 1, 1], out)
}

fn first_argmax(plane: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in plane.iter().enumerate() {
        if v > plane[best] {
            best = i;
        }
    }
    best
}

pub fn global_pool_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    mode: PoolMode,
) -> Result<Tensor> {
    let [n, c, h, w] = cached_input.shape();
    grad_out.expect_shape("global_pool_backward", [n, c, 1, 1])?;
    let area = h * w;
    let mut grad = Tensor::zeros(cached_input.shape());
    for ((plane, gplane), &g) in cached_input
        .data()
        .chunks(area)
        .zip(grad.data_mut().chunks_mut(area))
        .zip(grad_out.data())
    {
        match mode {
            PoolMode::Avg => gplane.fill(g / area as f32),
            PoolMode::Max => gplane[first_argmax(plane)] = g,
        }
    }
    Ok(grad)
}
