//! Invariants of the public API, each run on [`CASES`] random cases.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use trypoconv::data::{
    apply_affine, augment, resize_bilinear, AffineParams, AugmentConfig, Label, Sample,
};
use trypoconv::gradcam::gradcam;
use trypoconv::model::{Head, ModelConfig};
use trypoconv::nn::{conv2d, dense, maxpool2, Layer, LayerParams, Mode, PoolMode};
use trypoconv::train::{metrics_from_logits, roc_auc, Confusion, DECISION_THRESHOLD};
use trypoconv::{build_model, load_weights, save_weights, Rng, Tensor};

pub const CASES: u32 = 128;

/// Number of passing cases, or the minimal failing input.
pub type Outcome = Result<u32, String>;

fn check<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map(|()| CASES)
        .map_err(|e| e.to_string())
}

/// Every property with its name.
pub fn all() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        (
            "augmentation_keeps_shape_and_unit_range",
            augmentation_keeps_shape_and_unit_range,
        ),
        (
            "flips_are_involutions_and_compose_to_half_turn",
            flips_are_involutions_and_compose_to_half_turn,
        ),
        (
            "resizing_a_constant_image_is_constant",
            resizing_a_constant_image_is_constant,
        ),
        (
            "auc_is_invariant_under_monotone_maps",
            auc_is_invariant_under_monotone_maps,
        ),
        (
            "flipping_labels_complements_auc",
            flipping_labels_complements_auc,
        ),
        (
            "accuracy_and_confusion_agree_with_recount",
            accuracy_and_confusion_agree_with_recount,
        ),
        (
            "heatmaps_are_nonnegative_and_max_normalized",
            heatmaps_are_nonnegative_and_max_normalized,
        ),
        (
            "weight_files_round_trip_bit_identically",
            weight_files_round_trip_bit_identically,
        ),
        (
            "conv_and_dense_are_linear_without_bias",
            conv_and_dense_are_linear_without_bias,
        ),
        (
            "maxpool_undoes_duplication_upsampling",
            maxpool_undoes_duplication_upsampling,
        ),
        (
            "layer_output_shapes_match_forward",
            layer_output_shapes_match_forward,
        ),
        (
            "built_models_give_finite_logits",
            built_models_give_finite_logits,
        ),
    ]
}

fn random_image(shape: [usize; 4], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_f32())
}

fn unbiased(weight_shape: [usize; 4], outputs: usize, rng: &mut Rng) -> LayerParams {
    LayerParams::new(
        Tensor::from_fn(weight_shape, |_| rng.range(-1.0, 1.0) as f32),
        vec![0.0; outputs],
    )
}

fn scores_and_labels(rng: &mut Rng, n: usize, distinct: bool) -> (Vec<f64>, Vec<bool>) {
    let mut scores: Vec<f64> = (0..n)
        .map(|i| {
            if distinct {
                i as f64
            } else {
                rng.range_usize(0, 6) as f64
            }
        })
        .collect();
    rng.shuffle(&mut scores);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    (scores, labels)
}

fn max_abs(v: &[f32]) -> f32 {
    v.iter().fold(0.0f32, |m, x| m.max(x.abs()))
}

fn small_config(blocks: usize, size: usize, pool: bool) -> ModelConfig {
    let mut config = ModelConfig::default_for(blocks).with_input_size(size);
    if let Head::Conv { pool_mode, .. } = &mut config.head {
        *pool_mode = if pool { PoolMode::Max } else { PoolMode::Avg };
    }
    config
}

pub fn augmentation_keeps_shape_and_unit_range() -> Outcome {
    check(
        (
            any::<u64>(),
            1usize..16,
            1usize..16,
            0.0f64..180.0,
            0.0f64..0.99,
            0.0f64..0.99,
        ),
        |(seed, h, w, rotation, shear, zoom)| {
            let mut rng = Rng::new(seed);
            let cfg = AugmentConfig {
                hflip: true,
                vflip: true,
                rotation_max_deg: rotation,
                shear_range: shear,
                zoom_range: zoom,
            };
            let sample = Sample {
                image: random_image([1, 3, h, w], &mut rng),
                label: Label::Trypophobic,
                source_id: "s".into(),
            };
            let out = augment(&sample, &cfg, &mut rng);
            prop_assert_eq!(out.image.shape(), sample.image.shape());
            prop_assert_eq!(out.label, sample.label);
            prop_assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            Ok(())
        },
    )
}

pub fn flips_are_involutions_and_compose_to_half_turn() -> Outcome {
    check((any::<u64>(), 1usize..12, 1usize..12), |(seed, h, w)| {
        let mut rng = Rng::new(seed);
        let t = random_image([1, 3, h, w], &mut rng);
        let flip = |hflip, vflip| AffineParams {
            hflip,
            vflip,
            ..AffineParams::identity()
        };
        for p in [flip(true, false), flip(false, true)] {
            prop_assert_eq!(apply_affine(&apply_affine(&t, &p), &p), t.clone());
        }
        let half_turn = AffineParams {
            angle_deg: 180.0,
            ..AffineParams::identity()
        };
        let reversed = Tensor::from_fn(t.shape(), |[n, c, y, x]| {
            t.get([n, c, h - 1 - y, w - 1 - x])
        });
        prop_assert_eq!(apply_affine(&t, &flip(true, true)), reversed.clone());
        prop_assert_eq!(apply_affine(&t, &half_turn), reversed);
        Ok(())
    })
}

pub fn resizing_a_constant_image_is_constant() -> Outcome {
    check(
        (0.0f32..=1.0, 1usize..20, 1usize..20, 1usize..20, 1usize..20),
        |(v, h, w, oh, ow)| {
            let out = resize_bilinear(&Tensor::full([1, 3, h, w], v), oh, ow);
            prop_assert_eq!(out.shape(), [1, 3, oh, ow]);
            prop_assert!(out.data().iter().all(|&x| (x - v).abs() <= 1e-6));
            Ok(())
        },
    )
}

pub fn auc_is_invariant_under_monotone_maps() -> Outcome {
    check(
        (any::<u64>(), 2usize..60, 0.01f64..100.0, -50.0f64..50.0),
        |(seed, n, scale, shift)| {
            let mut rng = Rng::new(seed);
            let (scores, labels) = scores_and_labels(&mut rng, n, false);
            let base = roc_auc(&scores, &labels).unwrap();
            let affine: Vec<f64> = scores.iter().map(|s| scale * s + shift).collect();
            let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            prop_assert_eq!(roc_auc(&affine, &labels).unwrap(), base);
            prop_assert_eq!(roc_auc(&exp, &labels).unwrap(), base);
            Ok(())
        },
    )
}

pub fn flipping_labels_complements_auc() -> Outcome {
    check((any::<u64>(), 2usize..60), |(seed, n)| {
        let mut rng = Rng::new(seed);
        let (scores, labels) = scores_and_labels(&mut rng, n, true);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        Ok(())
    })
}

pub fn accuracy_and_confusion_agree_with_recount() -> Outcome {
    check((any::<u64>(), 1usize..60), |(seed, n)| {
        let mut rng = Rng::new(seed);
        let logits: Vec<f32> = (0..n).map(|_| rng.range(-4.0, 4.0) as f32).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
        let m = metrics_from_logits(&logits, &labels).unwrap();
        let predicted: Vec<bool> = logits
            .iter()
            .map(|&z| 1.0 / (1.0 + (-(z as f64)).exp()) >= DECISION_THRESHOLD)
            .collect();
        let count = |p: bool, l: bool| {
            predicted
                .iter()
                .zip(&labels)
                .filter(|&(&a, &b)| a == p && b == l)
                .count()
        };
        let expected = Confusion {
            tp: count(true, true),
            fp: count(true, false),
            tn: count(false, false),
            fn_: count(false, true),
        };
        prop_assert_eq!(m.confusion, expected);
        prop_assert_eq!(m.confusion.total(), n);
        prop_assert!((m.accuracy + m.error_rate() - 1.0).abs() <= 1e-12);
        Ok(())
    })
}

pub fn heatmaps_are_nonnegative_and_max_normalized() -> Outcome {
    check(
        (any::<u64>(), 1usize..=2, any::<bool>(), any::<bool>()),
        |(seed, blocks, pool, tap_pick)| {
            let config = small_config(blocks, 8, pool);
            let model = build_model(&config, &mut Rng::new(seed)).unwrap();
            let mut rng = Rng::new(seed ^ 0x5eed);
            let image = random_image([1, 3, 8, 8], &mut rng);
            let tap = if tap_pick { 1 } else { blocks };
            let heatmap = gradcam(&model, &image, tap).unwrap();
            let in_unit = |v: &f32| (0.0..=1.0).contains(v);
            prop_assert!(heatmap.values.iter().all(in_unit));
            prop_assert!(heatmap.upsampled.data().iter().all(in_unit));
            prop_assert_eq!(heatmap.upsampled.shape(), [1, 1, 8, 8]);
            if !heatmap.is_zero() {
                prop_assert_eq!(heatmap.values.iter().cloned().fold(0.0f32, f32::max), 1.0);
            }
            Ok(())
        },
    )
}

pub fn weight_files_round_trip_bit_identically() -> Outcome {
    check(
        (any::<u64>(), 1usize..=2, any::<bool>(), 32usize..80),
        |(seed, blocks, pool, hidden)| {
            let mut config = small_config(blocks, 8, pool);
            if let Head::Conv { hidden: h, .. } = &mut config.head {
                *h = hidden;
            }
            let mut model = build_model(&config, &mut Rng::new(seed)).unwrap();
            // Nonzero biases and awkward floats exercise every payload bit.
            let mut rng = Rng::new(seed.wrapping_add(1));
            for p in model.params_mut() {
                for b in p.bias.iter_mut() {
                    *b = f32::from_bits(rng.next_u64() as u32 & 0x3fff_ffff)
                        * if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                }
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.weights");
            save_weights(&model, &path).unwrap();
            let loaded = load_weights(&path, &config).unwrap();
            for (a, b) in model.params().iter().zip(loaded.params()) {
                let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(a.weights.data()), bits(b.weights.data()));
                prop_assert_eq!(bits(&a.bias), bits(&b.bias));
            }
            let x = random_image([1, 3, 8, 8], &mut rng);
            prop_assert_eq!(
                model.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap(),
                loaded.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap()
            );
            let again = dir.path().join("again.weights");
            save_weights(&loaded, &again).unwrap();
            prop_assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&again).unwrap()
            );
            Ok(())
        },
    )
}

pub fn conv_and_dense_are_linear_without_bias() -> Outcome {
    check(
        (
            any::<u64>(),
            -3.0f32..3.0,
            -3.0f32..3.0,
            1usize..5,
            1usize..5,
            prop::sample::select(vec![1usize, 3]),
            1usize..7,
        ),
        |(seed, a, b, c_in, c_out, k, side)| {
            let mut rng = Rng::new(seed);
            let x = random_image([2, c_in, side, side], &mut rng);
            let y = random_image([2, c_in, side, side], &mut rng);
            let mix = Tensor::from_fn(x.shape(), |i| a * x.get(i) + b * y.get(i));
            let check = |fx: Tensor, fy: Tensor, fmix: Tensor| {
                let want: Vec<f32> = fx
                    .data()
                    .iter()
                    .zip(fy.data())
                    .map(|(p, q)| a * p + b * q)
                    .collect();
                let scale = max_abs(&want).max(max_abs(fmix.data())).max(1e-6);
                let err = want
                    .iter()
                    .zip(fmix.data())
                    .fold(0.0f32, |m, (p, q)| m.max((p - q).abs()));
                err <= 1e-4 * scale
            };

            let conv = unbiased([c_out, c_in, k, k], c_out, &mut rng);
            prop_assert!(check(
                conv2d(&x, &conv).unwrap(),
                conv2d(&y, &conv).unwrap(),
                conv2d(&mix, &conv).unwrap()
            ));

            let d = c_in * side * side;
            let fc = unbiased([d, c_out, 1, 1], c_out, &mut rng);
            let flat = |t: &Tensor| t.clone().reshape([2, d, 1, 1]).unwrap();
            prop_assert!(check(
                dense(&flat(&x), &fc).unwrap(),
                dense(&flat(&y), &fc).unwrap(),
                dense(&flat(&mix), &fc).unwrap(),
            ));
            Ok(())
        },
    )
}

pub fn maxpool_undoes_duplication_upsampling() -> Outcome {
    check(
        (any::<u64>(), 1usize..4, 1usize..8, 1usize..8),
        |(seed, c, h, w)| {
            let mut rng = Rng::new(seed);
            let t = Tensor::from_fn([2, c, h, w], |_| rng.range(-5.0, 5.0) as f32);
            let up = Tensor::from_fn([2, c, 2 * h, 2 * w], |[n, ch, y, x]| {
                t.get([n, ch, y / 2, x / 2])
            });
            prop_assert_eq!(maxpool2(&up).unwrap(), t);
            Ok(())
        },
    )
}

pub fn layer_output_shapes_match_forward() -> Outcome {
    check(
        (
            any::<u64>(),
            1usize..3,
            1usize..4,
            1usize..5,
            1usize..5,
            0usize..8,
            0.0f32..0.9,
        ),
        |(seed, n, c, h, w, kind, rate)| {
            let mut rng = Rng::new(seed);
            let (h, w) = (2 * h, 2 * w);
            let layer = match kind {
                0 => Layer::Conv2d {
                    name: "c".into(),
                    params: LayerParams::new(random_image([3, c, 3, 3], &mut rng), vec![0.1; 3]),
                },
                1 => Layer::Conv2d {
                    name: "c".into(),
                    params: LayerParams::new(random_image([2, c, 1, 1], &mut rng), vec![0.0; 2]),
                },
                2 => Layer::Dense {
                    name: "d".into(),
                    params: LayerParams::new(
                        random_image([c * h * w, 5, 1, 1], &mut rng),
                        vec![0.0; 5],
                    ),
                },
                3 => Layer::Relu,
                4 => Layer::MaxPool2,
                5 => Layer::GlobalPool(if rate < 0.45 {
                    PoolMode::Avg
                } else {
                    PoolMode::Max
                }),
                6 => Layer::Flatten,
                _ => Layer::Dropout { rate },
            };
            let x = Tensor::from_fn([n, c, h, w], |_| rng.range(-1.0, 1.0) as f32);
            let x = if kind == 2 {
                x.reshape([n, c * h * w, 1, 1]).unwrap()
            } else {
                x
            };
            let expected = layer.output_shape(x.shape()).unwrap();
            for mode in [Mode::Train, Mode::Eval] {
                let (y, _) = layer.forward(&x, mode, &mut rng).unwrap();
                prop_assert_eq!(y.shape(), expected);
            }
            if kind == 7 {
                let (y, _) = layer.forward(&x, Mode::Eval, &mut rng).unwrap();
                prop_assert_eq!(y, x);
            }
            Ok(())
        },
    )
}

pub fn built_models_give_finite_logits() -> Outcome {
    check(
        (any::<u64>(), 1usize..=2, any::<bool>(), 1usize..3),
        |(seed, blocks, pool, n)| {
            let model = build_model(&small_config(blocks, 8, pool), &mut Rng::new(seed)).unwrap();
            let mut rng = Rng::new(!seed);
            let x = random_image([n, 3, 8, 8], &mut rng);
            let eval = model.forward(&x, Mode::Eval, &mut rng).unwrap();
            prop_assert_eq!(eval.shape(), [n, 1, 1, 1]);
            prop_assert!(eval.all_finite());
            prop_assert_eq!(
                model.forward(&x, Mode::Eval, &mut Rng::new(seed)).unwrap(),
                eval
            );
            let tap = model.tap_shape(blocks).unwrap();
            prop_assert_eq!(tap, [1, 64 << (blocks - 1), 8 >> blocks, 8 >> blocks]);
            Ok(())
        },
    )
}
