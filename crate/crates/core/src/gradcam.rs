//! Gradient-weighted class activation maps.
//!
//! For a feature tap `A` (channels `k`), the relevance map is
//! `ReLU(Σ_k α_k A_k)` with `α_k` the spatial mean of `∂y/∂A_k`, where `y` is the
//! raw positive-class logit.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub tap_name: String,
    /// Tap resolution (h, w).
    pub tap_size: (usize, usize),
    /// Max-normalized map at tap resolution, row-major.
    pub values: Vec<f32>,
    /// Bilinear upsampling of `values` to the input resolution, shape (1, 1, H, W).
    pub upsampled: Tensor,
}

impl Heatmap {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Intermediate quantities before normalization.
#[derive(Debug, Clone)]
pub struct RawCam {
    /// Tap activations, (1, C, h, w).
    pub activations: Tensor,
    /// Per-channel weights.
    pub alpha: Vec<f64>,
    /// `ReLU(Σ_k α_k A_k)`, row-major (h, w).
    pub map: Vec<f64>,
}

/// Tap activations and channel weights for a single image (batch of one).
pub fn gradcam_raw(model: &Model, image: &Tensor, tap: usize) -> Result<RawCam> {
    let layer = model.tap_layer(tap)?;
    if image.batch() != 1 {
        return Err(Error::shape("gradcam image", image.shape(), "(1, 3, H, W)"));
    }
    let trace = model.forward_trace(image, Mode::Eval, &mut Rng::new(0))?;
    let grad = model.activation_gradient(&trace, &Tensor::full([1, 1, 1, 1], 1.0), layer)?;
    combine(trace.activation(layer).clone(), &grad)
}

/// `ReLU(Σ_k α_k A_k)` from tap activations `A` and the logit's gradient with
/// respect to them, both (1, C, h, w).
pub fn combine(activations: Tensor, gradients: &Tensor) -> Result<RawCam> {
    if activations.shape() != gradients.shape() || activations.batch() != 1 {
        return Err(Error::shape(
            "gradcam combine",
            activations.shape(),
            gradients.shape(),
        ));
    }
    let [_, c, h, w] = activations.shape();
    let plane = h * w;
    let alpha: Vec<f64> = gradients
        .data()
        .chunks(plane)
        .map(|g| g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64)
        .collect();
    let mut map = vec![0.0f64; plane];
    for k in 0..c {
        let a = &activations.data()[k * plane..(k + 1) * plane];
        for (m, &v) in map.iter_mut().zip(a) {
            *m += alpha[k] * v as f64;
        }
    }
    for m in &mut map {
        *m = m.max(0.0);
    }
    Ok(RawCam {
        activations,
        alpha,
        map,
    })
}

/// Max-normalizes a raw map (an all-zero map stays zero) and upsamples it to
/// `out_h × out_w`.
pub fn normalize(raw: &RawCam, tap_name: impl Into<String>, out_h: usize, out_w: usize) -> Heatmap {
    let [_, _, h, w] = raw.activations.shape();
    let peak = raw.map.iter().cloned().fold(0.0f64, f64::max);
    let values: Vec<f32> = if peak > 0.0 {
        raw.map.iter().map(|&v| (v / peak) as f32).collect()
    } else {
        vec![0.0; h * w]
    };
    let small = Tensor::new([1, 1, h, w], values.clone()).expect("map has h*w entries");
    let upsampled = crate::data::resize_bilinear(&small, out_h, out_w).map(|v| v.clamp(0.0, 1.0));
    Heatmap {
        tap_name: tap_name.into(),
        tap_size: (h, w),
        values,
        upsampled,
    }
}

/// Grad-CAM heatmap for `image` at block `tap` (1-based).
pub fn gradcam(model: &Model, image: &Tensor, tap: usize) -> Result<Heatmap> {
    let raw = gradcam_raw(model, image, tap)?;
    Ok(normalize(
        &raw,
        format!("block{tap}"),
        image.height(),
        image.width(),
    ))
}

/// Jet colormap: blue → cyan → yellow → red over [0, 1].
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |center: f32| (1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Alpha-blends the jet-colored heatmap onto the image: `(1 − α)·image + α·jet(h)`.
pub fn overlay(image: &Tensor, heatmap: &Heatmap, alpha: f32) -> Result<RgbImage> {
    let [_, c, h, w] = image.shape();
    if c != 3 || heatmap.upsampled.shape() != [1, 1, h, w] {
        return Err(Error::shape(
            "overlay",
            image.shape(),
            heatmap.upsampled.shape(),
        ));
    }
    let plane = h * w;
    let item = image.item(0);
    let mut blended = vec![0.0f32; 3 * plane];
    for (i, &v) in heatmap.upsampled.data().iter().enumerate() {
        let color = jet(v);
        for ch in 0..3 {
            let x = item[ch * plane + i];
            blended[ch * plane + i] = if alpha == 0.0 {
                x
            } else if alpha == 1.0 {
                color[ch]
            } else {
                (1.0 - alpha) * x + alpha * color[ch]
            };
        }
    }
    Ok(crate::data::image::tensor_to_rgb(&Tensor::new(
        [1, 3, h, w],
        blended,
    )?))
}

/// Grayscale rendering of the upsampled map (255 = most relevant).
pub fn heatmap_image(heatmap: &Heatmap) -> image::GrayImage {
    let [_, _, h, w] = heatmap.upsampled.shape();
    crate::data::image::plane_to_gray(heatmap.upsampled.data(), h, w)
}

/// Share of heatmap mass inside `mask` (nonzero = inside), 0 for an all-zero map.
pub fn localization_score(heatmap: &Heatmap, mask: &Tensor) -> Result<f64> {
    if mask.len() != heatmap.upsampled.len() {
        return Err(Error::shape(
            "localization_score",
            heatmap.upsampled.shape(),
            mask.shape(),
        ));
    }
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for (&v, &m) in heatmap.upsampled.data().iter().zip(mask.data()) {
        total += v as f64;
        if m > 0.0 {
            inside += v as f64;
        }
    }
    Ok(if total > 0.0 { inside / total } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    fn heat(values: Vec<f32>, h: usize, w: usize) -> Heatmap {
        Heatmap {
            tap_name: "t".into(),
            tap_size: (h, w),
            upsampled: Tensor::new([1, 1, h, w], values.clone()).unwrap(),
            values,
        }
    }

    #[test]
    fn localization_examples() {
        let mask = Tensor::from_fn(
            [1, 1, 4, 4],
            |[_, _, y, x]| if y < 2 && x < 2 { 1.0 } else { 0.0 },
        );
        let inside = heat(mask.data().to_vec(), 4, 4);
        assert_eq!(localization_score(&inside, &mask).unwrap(), 1.0);
        let uniform = heat(vec![1.0; 16], 4, 4);
        assert_eq!(localization_score(&uniform, &mask).unwrap(), 0.25);
        assert_eq!(
            localization_score(&heat(vec![0.0; 16], 4, 4), &mask).unwrap(),
            0.0
        );
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(jet(0.5), [0.5, 1.0, 0.5]);
        assert_eq!(jet(1.0), [0.5, 0.0, 0.0]);
    }

    fn final_dense(model: &mut Model) -> &mut crate::nn::LayerParams {
        model
            .layers_mut()
            .iter_mut()
            .rev()
            .find_map(|l| l.params_mut())
            .unwrap()
    }

    fn random_image(size: usize, rng: &mut Rng) -> Tensor {
        Tensor::from_fn([1, 3, size, size], |_| rng.uniform_f32())
    }

    #[test]
    fn zero_final_dense_gives_zero_map() {
        let mut rng = Rng::new(11);
        let mut model =
            build_model(&ModelConfig::default_for(2).with_input_size(16), &mut rng).unwrap();
        final_dense(&mut model).weights.data_mut().fill(0.0);
        let h = gradcam(&model, &random_image(16, &mut rng), 2).unwrap();
        assert!(h.is_zero());
        assert!(h.upsampled.data().iter().all(|&v| v == 0.0));
        assert!(heatmap_image(&h).pixels().all(|p| p.0[0] == 0));
    }

    #[test]
    fn single_channel_constant_gradient() {
        let a = Tensor::new([1, 1, 2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.0, -0.25]).unwrap();
        let g = Tensor::full([1, 1, 2, 3], 0.75);
        let raw = combine(a, &g).unwrap();
        assert_eq!(raw.alpha, vec![0.75]);
        let h = normalize(&raw, "t", 2, 3);
        assert_eq!(h.values, vec![0.25, 0.0, 1.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn combine_rejects_mismatched_shapes() {
        let a = Tensor::zeros([1, 2, 2, 2]);
        assert!(combine(a, &Tensor::zeros([1, 2, 2, 3])).is_err());
    }

    #[test]
    fn final_dense_scale_cancels() {
        let mut rng = Rng::new(12);
        let model =
            build_model(&ModelConfig::default_for(2).with_input_size(16), &mut rng).unwrap();
        let x = random_image(16, &mut rng);
        for tap in [1, 2] {
            let base = gradcam(&model, &x, tap).unwrap();
            assert!(!base.is_zero());
            for c in [0.5f32, 3.0, 17.0] {
                let mut scaled = model.clone();
                for w in final_dense(&mut scaled).weights.data_mut() {
                    *w *= c;
                }
                let h = gradcam(&scaled, &x, tap).unwrap();
                for (a, b) in h.values.iter().zip(&base.values) {
                    assert!((a - b).abs() <= 1e-5, "tap {tap} c {c}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn deepest_tap_gradients_finite() {
        let mut rng = Rng::new(13);
        let model =
            build_model(&ModelConfig::default_for(2).with_input_size(16), &mut rng).unwrap();
        let mut inputs = vec![
            Tensor::zeros([1, 3, 16, 16]),
            Tensor::full([1, 3, 16, 16], 1.0),
        ];
        inputs.extend((0..20).map(|_| random_image(16, &mut rng)));
        for x in &inputs {
            let raw = gradcam_raw(&model, x, 2).unwrap();
            assert!(raw.alpha.iter().all(|a| a.is_finite()));
            let h = normalize(&raw, "t", 16, 16);
            assert!(h
                .values
                .iter()
                .chain(h.upsampled.data())
                .all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn overlay_alpha_zero_is_the_image() {
        let mut rng = Rng::new(14);
        let x = random_image(6, &mut rng);
        let zero = heat(vec![0.0; 36], 6, 6);
        let out = overlay(&x, &zero, 0.0).unwrap();
        assert_eq!(out, crate::data::image::tensor_to_rgb(&x));
    }

    #[test]
    fn overlay_alpha_one_is_the_colormap() {
        let mut rng = Rng::new(15);
        let x = random_image(5, &mut rng);
        let values: Vec<f32> = (0..25).map(|i| i as f32 / 24.0).collect();
        let out = overlay(&x, &heat(values.clone(), 5, 5), 1.0).unwrap();
        for (i, p) in out.pixels().enumerate() {
            let expected = jet(values[i]).map(|v| (v * 255.0).round() as u8);
            assert_eq!(p.0, expected, "pixel {i}");
        }
    }

    #[test]
    fn overlay_mid_gray_delta_blend() {
        let gray = Tensor::full([1, 3, 3, 3], 0.5);
        let mut values = vec![0.0; 9];
        values[4] = 1.0;
        let out = overlay(&gray, &heat(values, 3, 3), 0.5).unwrap();
        // 0.5·0.5 + 0.5·jet(1) = (0.5, 0.25, 0.25); elsewhere 0.5·0.5 + 0.5·jet(0) = (0.25, 0.25, 0.5).
        assert_eq!(out.get_pixel(1, 1).0, [128, 64, 64]);
        assert_eq!(out.get_pixel(0, 0).0, [64, 64, 128]);
        assert_eq!(out.get_pixel(2, 1).0, [64, 64, 128]);
    }

    #[test]
    fn bad_tap_rejected() {
        let model = build_model(
            &ModelConfig::default_for(1).with_input_size(8),
            &mut Rng::new(0),
        )
        .unwrap();
        let x = Tensor::full([1, 3, 8, 8], 0.5);
        assert!(gradcam(&model, &x, 2).is_err());
        assert!(gradcam(&model, &x, 0).is_err());
        assert!(gradcam(&model, &Tensor::full([2, 3, 8, 8], 0.5), 1).is_err());
    }
}
