//! Library results against independent brute-force computations.

use image::{Rgb, RgbImage};
use trypoconv::data::load_dataset;
use trypoconv::gradcam::gradcam_raw;
use trypoconv::model::{Head, ModelConfig};
use trypoconv::nn::{
    conv2d, gradient_check, layer_forward_wide, Layer, LayerParams, Mode, PoolMode,
};
use trypoconv::train::roc_auc;
use trypoconv::{build_model, Model, Rng, Tensor};

use super::Case;

fn direct_conv(x: &Tensor, w: &Tensor, b: &[f32]) -> Vec<f64> {
    let [n, c_in, h, wd] = x.shape();
    let [c_out, _, k, _] = w.shape();
    let pad = (k / 2) as isize;
    let mut out = vec![0.0f64; n * c_out * h * wd];
    for b_i in 0..n {
        for co in 0..c_out {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[co] as f64;
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad;
                                let ix = xx as isize + kx as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.get([co, ci, ky, kx]) as f64
                                        * x.get([b_i, ci, iy as usize, ix as usize]) as f64;
                                }
                            }
                        }
                    }
                    out[((b_i * c_out + co) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}

/// Max absolute difference between `conv2d` and direct loops on random cases.
pub fn conv_errors() -> Vec<Case> {
    let mut rng = Rng::new(100);
    (0..12)
        .map(|case| {
            let k = if case % 3 == 0 { 1 } else { 3 };
            let n = rng.range_usize(1, 3);
            let c_in = rng.range_usize(1, 6);
            let c_out = rng.range_usize(1, 7);
            let h = rng.range_usize(1, 9);
            let w = rng.range_usize(1, 9);
            let x = Tensor::from_fn([n, c_in, h, w], |_| rng.range(-1.0, 1.0) as f32);
            let params = LayerParams::new(
                Tensor::from_fn([c_out, c_in, k, k], |_| rng.range(-1.0, 1.0) as f32),
                (0..c_out).map(|_| rng.range(-1.0, 1.0) as f32).collect(),
            );
            let got = conv2d(&x, &params).unwrap();
            let want = direct_conv(&x, &params.weights, &params.bias);
            let err = got
                .data()
                .iter()
                .zip(&want)
                .map(|(&g, &w)| (g as f64 - w).abs())
                .fold(0.0, f64::max);
            (format!("conv case {case} ({n}x{c_in}x{h}x{w}, k={k})"), err)
        })
        .collect()
}

/// Half-pixel bilinear sample of an 8-bit image channel, in f64.
fn bilinear_oracle(img: &RgbImage, c: usize, out: usize, oy: usize, ox: usize) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = |size: usize, o: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * size as f64 / out as f64 - 0.5).clamp(0.0, (size - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(size - 1), s - i0 as f64)
    };
    let (y0, y1, fy) = src(h, oy);
    let (x0, x1, fx) = src(w, ox);
    let p = |y: usize, x: usize| img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0;
    (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1))
        + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1))
}

/// Max difference between images loaded at 224 px and a bilinear oracle.
pub fn load_errors() -> Vec<Case> {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(101);
    let big = RgbImage::from_fn(448, 448, |x, y| {
        Rgb([
            ((x * 7 + y * 3) % 256) as u8,
            (rng.next_u64() % 256) as u8,
            ((x ^ y) % 256) as u8,
        ])
    });
    let odd = RgbImage::from_fn(301, 177, |x, y| {
        Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8])
    });
    for class in ["trypophobic", "neutral"] {
        std::fs::create_dir_all(tmp.path().join(class)).unwrap();
    }
    big.save(tmp.path().join("trypophobic/big.png")).unwrap();
    odd.save(tmp.path().join("neutral/odd.png")).unwrap();

    let ds = load_dataset(tmp.path(), 224).unwrap();
    assert_eq!(ds.samples.len(), 2);
    ds.samples
        .iter()
        .zip([&big, &odd])
        .map(|(sample, src)| {
            assert_eq!(sample.image.shape(), [1, 3, 224, 224]);
            let mut err = 0.0f64;
            for c in 0..3 {
                for y in 0..224 {
                    for x in 0..224 {
                        let got = sample.image.get([0, c, y, x]) as f64;
                        err = err.max((got - bilinear_oracle(src, c, 224, y, x)).abs());
                    }
                }
            }
            (format!("resize {}", sample.source_id), err)
        })
        .collect()
}

fn pairwise_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &p) in positives.iter().enumerate() {
        if !p {
            continue;
        }
        for (j, &q) in positives.iter().enumerate() {
            if q {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// `roc_auc` against O(n²) pairwise concordance, with and without ties.
pub fn auc_errors() -> Vec<Case> {
    let mut rng = Rng::new(102);
    (0..200)
        .map(|case| {
            let n = 20;
            let mut positives: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
            positives[0] = true;
            positives[1] = false;
            // Coarse scores in some cases so ties occur.
            let levels = if case % 2 == 0 { 5.0 } else { 1e6 };
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.uniform() * levels).floor() / levels)
                .collect();
            let got = roc_auc(&scores, &positives).unwrap();
            (
                format!("auc case {case}"),
                (got - pairwise_auc(&scores, &positives)).abs(),
            )
        })
        .collect()
}

/// Logit as a function of the tap activations, evaluated in f64.
fn tail_logit(model: &Model, start: usize, shape: [usize; 4], a: &[f64]) -> f64 {
    let mut shape = shape;
    let mut x = a.to_vec();
    for layer in &model.layers()[start..] {
        (shape, x) = layer_forward_wide(layer, shape, &x).unwrap();
    }
    x[0]
}

/// Grad-CAM channel weights and raw map against central differences of the logit
/// with respect to the tap activations. Errors are relative to the largest |α| and
/// the largest pre-ReLU map value respectively.
pub fn gradcam_errors() -> Vec<Case> {
    let mut cases = Vec::new();
    for (seed, blocks, size) in [(103, 1, 8), (104, 2, 8), (105, 2, 8)] {
        let model = build_model(
            &ModelConfig::default_for(blocks).with_input_size(size),
            &mut Rng::new(seed),
        )
        .unwrap();
        let mut rng = Rng::new(seed + 1000);
        let image = Tensor::from_fn([1, 3, size, size], |_| rng.uniform_f32());
        for tap in 1..=blocks {
            let raw = gradcam_raw(&model, &image, tap).unwrap();
            let layer = model.tap_layer(tap).unwrap();
            let shape = raw.activations.shape();
            let [_, c, h, w] = shape;
            let base: Vec<f64> = raw.activations.data().iter().map(|&v| v as f64).collect();
            let step = 1e-4;
            // The mean of the partials over channel k is the derivative along the
            // all-ones direction of that channel divided by the plane size.
            let mut alpha = vec![0.0f64; c];
            let mut a = base.clone();
            for k in 0..c {
                let plane = k * h * w..(k + 1) * h * w;
                let mut shifted = |delta: f64| {
                    for i in plane.clone() {
                        a[i] = base[i] + delta;
                    }
                    tail_logit(&model, layer + 1, shape, &a)
                };
                let up = shifted(step);
                let down = shifted(-step);
                shifted(0.0);
                alpha[k] = (up - down) / (2.0 * step) / (h * w) as f64;
            }
            let label = format!("gradcam seed {seed} blocks {blocks} tap {tap}");
            let alpha_scale = alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            let pre: Vec<f64> = (0..h * w)
                .map(|i| (0..c).map(|k| alpha[k] * base[k * h * w + i]).sum::<f64>())
                .collect();
            let scale = pre.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if alpha_scale == 0.0 || scale == 0.0 {
                cases.push((format!("{label}: degenerate oracle"), f64::INFINITY));
                continue;
            }
            let alpha_err = raw
                .alpha
                .iter()
                .zip(&alpha)
                .map(|(g, w)| (g - w).abs() / alpha_scale)
                .fold(0.0, f64::max);
            let map_err = raw
                .map
                .iter()
                .zip(&pre)
                .map(|(g, w)| (g - w.max(0.0)).abs() / scale)
                .fold(0.0, f64::max);
            cases.push((format!("{label} alpha"), alpha_err));
            cases.push((format!("{label} map"), map_err));
        }
    }
    cases
}

fn rand_params(shape: [usize; 4], bias: usize, rng: &mut Rng) -> LayerParams {
    LayerParams::new(
        Tensor::from_fn(shape, |_| rng.range(-0.5, 0.5) as f32),
        (0..bias).map(|_| rng.range(-0.5, 0.5) as f32).collect(),
    )
}

/// Gradient check of every layer type over several seeds.
pub fn layer_gradient_errors() -> Vec<Case> {
    let mut rng = Rng::new(106);
    let cases: Vec<(Layer, [usize; 4])> = vec![
        (
            Layer::Conv2d {
                name: "c3".into(),
                params: rand_params([4, 3, 3, 3], 4, &mut rng),
            },
            [2, 3, 5, 5],
        ),
        (
            Layer::Conv2d {
                name: "c1".into(),
                params: rand_params([5, 4, 1, 1], 5, &mut rng),
            },
            [2, 4, 3, 3],
        ),
        (
            Layer::Dense {
                name: "d".into(),
                params: rand_params([18, 4, 1, 1], 4, &mut rng),
            },
            [3, 2, 3, 3],
        ),
        (Layer::Relu, [2, 3, 4, 4]),
        (Layer::MaxPool2, [2, 3, 4, 6]),
        (Layer::GlobalPool(PoolMode::Avg), [2, 3, 4, 4]),
        (Layer::GlobalPool(PoolMode::Max), [2, 3, 4, 4]),
        (Layer::Flatten, [2, 3, 2, 2]),
        (Layer::Dropout { rate: 0.5 }, [2, 3, 2, 2]),
    ];
    let mut out = Vec::new();
    for (mut layer, shape) in cases {
        for seed in 0..5 {
            let err = gradient_check(&mut layer, shape, &mut Rng::new(seed)).unwrap();
            out.push((format!("{} seed {seed}", layer.kind()), err));
        }
    }
    out
}

/// Gradient check of a dense layer with zero weights, whose objective is linear in
/// the bias, so central differences are exact up to rounding.
pub fn bias_only_gradient_errors() -> Vec<Case> {
    (0..20)
        .map(|seed| {
            let mut rng = Rng::new(200 + seed);
            let mut layer = Layer::Dense {
                name: "d".into(),
                params: LayerParams::new(
                    Tensor::zeros([6, 3, 1, 1]),
                    (0..3).map(|_| rng.range(-2.0, 2.0) as f32).collect(),
                ),
            };
            let err = gradient_check(&mut layer, [4, 6, 1, 1], &mut rng).unwrap();
            (format!("bias-only dense seed {seed}"), err)
        })
        .collect()
}

/// End-to-end gradient check of the one-block model with either global pooling.
pub fn model_gradient_errors() -> Vec<Case> {
    // A 2x2 input keeps the number of ReLU sites low enough that most coordinates have
    // no kink within one step of the 64-wide layers.
    [(300, PoolMode::Avg), (301, PoolMode::Max)]
        .into_iter()
        .map(|(seed, pool)| {
            let mut config = ModelConfig::default_for(1).with_input_size(2);
            if let Head::Conv { pool_mode, .. } = &mut config.head {
                *pool_mode = pool;
            }
            let mut model = build_model(&config, &mut Rng::new(seed)).unwrap();
            let err = gradient_check(&mut model, [2, 3, 2, 2], &mut Rng::new(seed)).unwrap();
            // Checking must not leave the model in a different state for inference.
            let x = Tensor::full([1, 3, 2, 2], 0.5);
            let a = model.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
            let b = model.forward(&x, Mode::Eval, &mut Rng::new(1)).unwrap();
            assert_eq!(a, b);
            (format!("one-block model, {pool} pooling"), err)
        })
        .collect()
}
