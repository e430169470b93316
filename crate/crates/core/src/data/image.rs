//! Pixel-level helpers: bilinear resampling and PNG conversion.

use std::path::Path;

use image::{GrayImage, RgbImage};

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize with half-pixel centers and clamp-to-edge borders, per plane.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = input.shape();
    if (h, w) == (out_h, out_w) {
        return input.clone();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in input.data().chunks(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], out).expect("sizes computed above")
}

/// Shrinks by an integer `factor` (2 or 4). Each output pixel is the mean of its
/// factor×factor source block, which is what half-pixel bilinear gives at factor 2
/// and keeps repeated halving equal to a single larger reduction.
pub fn downsample(sample: &Sample, factor: usize) -> Result<Sample> {
    if factor != 2 && factor != 4 {
        return Err(Error::Invalid(format!(
            "downsample factor must be 2 or 4, got {factor}"
        )));
    }
    let [n, c, h, w] = sample.image.shape();
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Invalid(format!(
            "image size {h}x{w} is not divisible by downsample factor {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in sample.image.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for dy in 0..factor {
                    let row = (oy * factor + dy) * w + ox * factor;
                    acc += plane[row..row + factor].iter().sum::<f32>();
                }
                out.push(acc * norm);
            }
        }
    }
    Ok(Sample {
        image: Tensor::new([n, c, oh, ow], out)?,
        label: sample.label,
        source_id: sample.source_id.clone(),
    })
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
        raw[(y * w + x) * 3 + c] as f32 / 255.0
    })
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// First item of an (N, 3, H, W) tensor as 8-bit RGB.
pub fn tensor_to_rgb(t: &Tensor) -> RgbImage {
    let [_, _, h, w] = t.shape();
    let item = t.item(0);
    let plane = h * w;
    let mut raw = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            raw.push(to_byte(item[c * plane + i]));
        }
    }
    RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized for image")
}

/// Single-channel map (any tensor with one plane per item) as 8-bit grayscale.
pub fn plane_to_gray(values: &[f32], h: usize, w: usize) -> GrayImage {
    let raw = values[..h * w].iter().map(|&v| to_byte(v)).collect();
    GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer sized for image")
}

pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(rgb_to_tensor(&img.to_rgb8()))
}

/// Reads a grayscale PNG as a (1, 1, H, W) tensor in [0, 1].
pub fn read_gray(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::new(
        [1, 1, h, w],
        img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
    )
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
