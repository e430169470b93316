use rayon::prelude::*;

use super::{matmul, GradSink, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride-1 "same" cross-correlation. Weights are laid out (C_out, C_in, k, k) with
/// odd square `k`; the bias has one entry per output channel.
pub fn conv2d(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    conv2d_forward(input, &params.weights, &params.bias)
}

/// Gradient of [`conv2d`] with respect to its input; weight and bias gradients are
/// added into `params`.
pub fn conv2d_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    params: &mut LayerParams,
) -> Result<Tensor> {
    let (weights, sink) = params.split();
    conv2d_backward_raw(grad_out, cached_input, weights, Some(sink), true)
        .map(|g| g.expect("input grad requested"))
}

struct Geometry {
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    w: usize,
}

impl Geometry {
    fn of(input: &Tensor, weights: &Tensor, bias_len: usize) -> Result<Self> {
        let [c_out, c_in, kh, kw] = weights.shape();
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Invalid(format!(
                "conv2d kernel must be square with odd size, got {kh}x{kw}"
            )));
        }
        if input.channels() != c_in {
            return Err(Error::shape(
                "conv2d input vs weights",
                input.shape(),
                weights.shape(),
            ));
        }
        if bias_len != c_out {
            return Err(Error::shape(
                "conv2d bias vs weights",
                bias_len,
                weights.shape(),
            ));
        }
        Ok(Geometry {
            c_in,
            c_out,
            k: kh,
            h: input.height(),
            w: input.width(),
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

fn im2col(item: &[f32], g: &Geometry, cols: &mut [f32]) {
    let pad = (g.k / 2) as isize;
    let (h, w) = (g.h as isize, g.w as isize);
    let plane = g.plane();
    for ci in 0..g.c_in {
        let src = &item[ci * plane..(ci + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    let out_row = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &src[(sy * w) as usize..((sy + 1) * w) as usize];
                    for x in 0..w {
                        let sx = x + dx;
                        out_row[x as usize] = if sx < 0 || sx >= w {
                            0.0
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f32], g: &Geometry, item: &mut [f32]) {
    let pad = (g.k / 2) as isize;
    let (h, w) = (g.h as isize, g.w as isize);
    let plane = g.plane();
    for ci in 0..g.c_in {
        let dst = &mut item[ci * plane..(ci + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x + dx;
                        if sx >= 0 && sx < w {
                            dst[(sy * w + sx) as usize] += src[(y * w + x) as usize];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let g = Geometry::of(input, weights, bias.len())?;
    let [n, _, h, w] = input.shape();
    let plane = g.plane();
    let mut out = Tensor::zeros([n, g.c_out, h, w]);
    let out_len = g.c_out * plane;
    out.data_mut()
        .par_chunks_mut(out_len.max(1))
        .enumerate()
        .for_each(|(i, dst)| {
            for (co, row) in dst.chunks_mut(plane.max(1)).enumerate() {
                row.fill(bias[co]);
            }
            let item = input.item(i);
            if g.k == 1 {
                matmul(
                    g.c_out,
                    g.c_in,
                    plane,
                    weights.data(),
                    false,
                    item,
                    false,
                    dst,
                    true,
                );
            } else {
                let mut cols = vec![0.0f32; g.patch() * plane];
                im2col(item, &g, &mut cols);
                matmul(
                    g.c_out,
                    g.patch(),
                    plane,
                    weights.data(),
                    false,
                    &cols,
                    false,
                    dst,
                    true,
                );
            }
        });
    Ok(out)
}

/// Shared backward. Per-sample weight gradients are reduced in sample order so the
/// result does not depend on the thread count.
pub(crate) fn conv2d_backward_raw(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    sink: Option<GradSink<'_>>,
    need_input_grad: bool,
) -> Result<Option<Tensor>> {
    let g = Geometry::of(input, weights, weights.shape()[0])?;
    let [n, _, h, w] = input.shape();
    grad_out.expect_shape("conv2d_backward grad_out", [n, g.c_out, h, w])?;
    let plane = g.plane();
    let want_params = sink.is_some();

    let per_sample: Vec<(Option<Vec<f32>>, Option<Vec<f32>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let gout = grad_out.item(i);
            let item = input.item(i);
            let cols = if g.k == 1 {
                None
            } else {
                let mut cols = vec![0.0f32; g.patch() * plane];
                im2col(item, &g, &mut cols);
                Some(cols)
            };
            let patches = cols.as_deref().unwrap_or(item);
            let gw = want_params.then(|| {
                let mut gw = vec![0.0f32; g.c_out * g.patch()];
                matmul(
                    g.c_out,
                    plane,
                    g.patch(),
                    gout,
                    false,
                    patches,
                    true,
                    &mut gw,
                    false,
                );
                gw
            });
            let gx = need_input_grad.then(|| {
                if g.k == 1 {
                    let mut gx = vec![0.0f32; g.c_in * plane];
                    matmul(
                        g.c_in,
                        g.c_out,
                        plane,
                        weights.data(),
                        true,
                        gout,
                        false,
                        &mut gx,
                        false,
                    );
                    gx
                } else {
                    let mut gcols = vec![0.0f32; g.patch() * plane];
                    matmul(
                        g.patch(),
                        g.c_out,
                        plane,
                        weights.data(),
                        true,
                        gout,
                        false,
                        &mut gcols,
                        false,
                    );
                    let mut gx = vec![0.0f32; g.c_in * plane];
                    col2im_add(&gcols, &g, &mut gx);
                    gx
                }
            });
            (gw, gx)
        })
        .collect();

    if let Some(sink) = sink {
        for (co, b) in sink.bias.iter_mut().enumerate() {
            let total: f64 = (0..n)
                .flat_map(|i| &grad_out.item(i)[co * plane..(co + 1) * plane])
                .map(|&v| v as f64)
                .sum();
            *b += total as f32;
        }
        for (gw, _) in &per_sample {
            if let Some(gw) = gw {
                for (acc, v) in sink.weights.iter_mut().zip(gw) {
                    *acc += v;
                }
            }
        }
    }

    if !need_input_grad {
        return Ok(None);
    }
    let mut data = Vec::with_capacity(input.len());
    for (_, gx) in per_sample {
        data.extend(gx.expect("input grad computed"));
    }
    Tensor::new(input.shape(), data).map(Some)
}
