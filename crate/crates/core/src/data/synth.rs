//! Synthetic two-class pattern images.
//!
//! Positives carry a cluster of dark, soft-edged circular holes over a textured
//! background; negatives share the background family but add stripes, a stronger
//! gradient or plain noise, and never contain holes.

use serde::{Deserialize, Serialize};

use super::{Label, Sample};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Upper bound on the fraction of the image covered by holes.
const MAX_HOLE_COVERAGE: f64 = 0.22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_trypo: usize,
    pub n_neutral: usize,
    pub size: usize,
    /// Inclusive.
    pub hole_count_range: (usize, usize),
    pub hole_radius_range: (f64, f64),
    pub seed: u64,
    pub emit_masks: bool,
}

impl SynthConfig {
    /// Default hole ranges scaled to the image size.
    pub fn new(n_trypo: usize, n_neutral: usize, size: usize, seed: u64) -> Self {
        let s = size as f64;
        SynthConfig {
            n_trypo,
            n_neutral,
            size,
            hole_count_range: (8, 16),
            hole_radius_range: (s / 16.0, s / 9.0),
            seed,
            emit_masks: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trypo == 0 || self.n_neutral == 0 {
            return Err(Error::Invalid(
                "synthetic class counts must be positive".into(),
            ));
        }
        if self.size < 4 {
            return Err(Error::Invalid(format!(
                "synthetic image size {} is too small",
                self.size
            )));
        }
        let (c0, c1) = self.hole_count_range;
        if c0 == 0 || c0 > c1 {
            return Err(Error::Invalid(format!("bad hole count range {c0}..={c1}")));
        }
        let (r0, r1) = self.hole_radius_range;
        if !(r0 > 0.0 && r0 <= r1 && r1 < self.size as f64 / 2.0) {
            return Err(Error::Invalid(format!(
                "hole radius range [{r0}, {r1}] must be positive and below size/2"
            )));
        }
        Ok(())
    }
}

/// Generated samples; `masks[i]` is a (1, 1, S, S) 0/1 map of hole pixels for
/// `samples[i]` when masks were requested.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSet {
    pub samples: Vec<Sample>,
    pub masks: Option<Vec<Tensor>>,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthSet> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_trypo + cfg.n_neutral);
    let mut masks = Vec::with_capacity(samples.capacity());
    for i in 0..cfg.n_trypo + cfg.n_neutral {
        let mut rng = root.fork(i as u64);
        let positive = i < cfg.n_trypo;
        let mut img = background(cfg.size, &mut rng);
        let mut mask = vec![0.0f32; cfg.size * cfg.size];
        let (label, source_id) = if positive {
            holes(cfg, &mut img, &mut mask, &mut rng);
            (Label::Trypophobic, format!("trypo_{i:05}"))
        } else {
            neutral_pattern(cfg.size, &mut img, &mut rng);
            (Label::Neutral, format!("neutral_{:05}", i - cfg.n_trypo))
        };
        for v in img.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        samples.push(Sample {
            image: Tensor::new([1, 3, cfg.size, cfg.size], img)?,
            label,
            source_id,
        });
        masks.push(Tensor::new([1, 1, cfg.size, cfg.size], mask)?);
    }
    Ok(SynthSet {
        samples,
        masks: cfg.emit_masks.then_some(masks),
    })
}

/// Tinted gray with a gentle linear gradient and pixel noise, (3, S, S) planar.
fn background(size: usize, rng: &mut Rng) -> Vec<f32> {
    let base = rng.range(0.5, 0.75);
    let tint: Vec<f64> = (0..3).map(|_| rng.range(-0.06, 0.06)).collect();
    let amp = rng.range(0.0, 0.08);
    let theta = rng.range(0.0, std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let s = size as f64;
    let mut img = vec![0.0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let t = ((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy) * 2.0 * amp;
            let noise = rng.range(-0.04, 0.04);
            for c in 0..3 {
                img[(c * size + y) * size + x] = (base + tint[c] + t + noise) as f32;
            }
        }
    }
    img
}

fn holes(cfg: &SynthConfig, img: &mut [f32], mask: &mut [f32], rng: &mut Rng) {
    let size = cfg.size;
    let s = size as f64;
    let (r_lo, r_hi) = cfg.hole_radius_range;
    let target = rng.range_usize(cfg.hole_count_range.0, cfg.hole_count_range.1);
    let (cx, cy) = (rng.range(0.3 * s, 0.7 * s), rng.range(0.3 * s, 0.7 * s));
    let spread = 0.12 * s;
    let mut placed: Vec<(f64, f64, f64)> = Vec::with_capacity(target);
    let mut area = 0.0;
    for _ in 0..target * 30 {
        if placed.len() == target {
            break;
        }
        let r = rng.range(r_lo, r_hi);
        let x = cx + spread * rng.normal();
        let y = cy + spread * rng.normal();
        if x - r < 0.0 || y - r < 0.0 || x + r > s - 1.0 || y + r > s - 1.0 {
            continue;
        }
        if placed
            .iter()
            .any(|&(px, py, pr)| (px - x).hypot(py - y) < r + pr + 1.0)
        {
            continue;
        }
        let disc = std::f64::consts::PI * r * r;
        if !placed.is_empty() && (area + disc) / (s * s) > MAX_HOLE_COVERAGE {
            break;
        }
        area += disc;
        placed.push((x, y, r));
    }
    if placed.is_empty() {
        // Tiny images: one centered hole of the smallest radius.
        placed.push((s / 2.0, s / 2.0, r_lo));
    }

    let plane = size * size;
    for &(hx, hy, r) in &placed {
        let depth = rng.range(0.04, 0.14);
        let y0 = (hy - r - 1.0).floor().max(0.0) as usize;
        let y1 = ((hy + r + 1.0).ceil() as usize).min(size - 1);
        let x0 = (hx - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((hx + r + 1.0).ceil() as usize).min(size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (x as f64 - hx).hypot(y as f64 - hy);
                // One-pixel soft edge centered on the rim.
                let alpha = (r - d + 0.5).clamp(0.0, 1.0) as f32;
                if alpha > 0.0 {
                    for c in 0..3 {
                        let v = &mut img[c * plane + y * size + x];
                        *v = *v * (1.0 - alpha) + depth as f32 * alpha;
                    }
                }
                if d <= r {
                    mask[y * size + x] = 1.0;
                }
            }
        }
    }
}

/// Mean-preserving texture so neutral images are not darker on average.
fn neutral_pattern(size: usize, img: &mut [f32], rng: &mut Rng) {
    let s = size as f64;
    let plane = size * size;
    let kind = rng.range_usize(0, 2);
    let theta = rng.range(0.0, std::f64::consts::PI);
    let (dx, dy) = (theta.cos(), theta.sin());
    let period = rng.range(s / 8.0, s / 3.0);
    let phase = rng.range(0.0, std::f64::consts::TAU);
    let amp = match kind {
        0 => rng.range(0.08, 0.2),
        1 => rng.range(0.08, 0.16),
        _ => 0.0,
    };
    for y in 0..size {
        for x in 0..size {
            let u = x as f64 * dx + y as f64 * dy;
            let delta = match kind {
                0 => amp * (std::f64::consts::TAU * u / period + phase).sin(),
                1 => amp * 2.0 * ((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy),
                _ => rng.range(-0.05, 0.05),
            };
            for c in 0..3 {
                img[c * plane + y * size + x] += delta as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(t: &Tensor) -> f64 {
        t.data().iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig::new(3, 3, 32, 99);
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig { seed: 100, ..cfg };
        assert_ne!(
            synth_generate(&cfg).unwrap(),
            synth_generate(&other).unwrap()
        );
    }

    #[test]
    fn masks_mark_only_positives() {
        let set = synth_generate(&SynthConfig::new(10, 10, 64, 5)).unwrap();
        let masks = set.masks.unwrap();
        for (s, m) in set.samples.iter().zip(&masks) {
            let covered = m.data().iter().filter(|&&v| v > 0.5).count();
            match s.label {
                Label::Trypophobic => {
                    assert!(covered > 0);
                    assert!(covered as f64 / m.len() as f64 <= 0.25);
                }
                Label::Neutral => assert_eq!(covered, 0),
            }
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let no_masks = synth_generate(&SynthConfig {
            emit_masks: false,
            ..SynthConfig::new(1, 1, 16, 5)
        })
        .unwrap();
        assert!(no_masks.masks.is_none());
    }

    #[test]
    fn positives_are_darker_on_average() {
        let set = synth_generate(&SynthConfig::new(100, 100, 64, 2024)).unwrap();
        let class_mean = |label| {
            let xs: Vec<f64> = set
                .samples
                .iter()
                .filter(|s| s.label == label)
                .map(|s| mean(&s.image))
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        assert!(class_mean(Label::Trypophobic) < class_mean(Label::Neutral));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(synth_generate(&SynthConfig::new(0, 1, 32, 0)).is_err());
        let mut cfg = SynthConfig::new(1, 1, 32, 0);
        cfg.hole_radius_range = (2.0, 16.0);
        assert!(synth_generate(&cfg).is_err());
    }
}
