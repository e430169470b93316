use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Random geometric augmentation: mirroring, rotation, shear and zoom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub rotation_max_deg: f64,
    pub shear_range: f64,
    pub zoom_range: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: true,
            vflip: true,
            rotation_max_deg: 45.0,
            shear_range: 0.3,
            zoom_range: 0.3,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            hflip: false,
            vflip: false,
            rotation_max_deg: 0.0,
            shear_range: 0.0,
            zoom_range: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == AugmentConfig::none()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_max_deg >= 0.0) {
            return Err(Error::Invalid(format!(
                "rotation_max_deg must be >= 0, got {}",
                self.rotation_max_deg
            )));
        }
        for (name, v) in [
            ("shear_range", self.shear_range),
            ("zoom_range", self.zoom_range),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// One concrete draw of the augmentation knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise as displayed (rows growing downwards).
    pub angle_deg: f64,
    /// Horizontal shear factor.
    pub shear: f64,
    /// Scale factor; > 1 magnifies.
    pub zoom: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            hflip: false,
            vflip: false,
            angle_deg: 0.0,
            shear: 0.0,
            zoom: 1.0,
        }
    }

    pub fn sample(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        let hflip = cfg.hflip && rng.bernoulli(0.5);
        let vflip = cfg.vflip && rng.bernoulli(0.5);
        let r = cfg.rotation_max_deg;
        let angle_deg = if r > 0.0 { rng.range(-r, r) } else { 0.0 };
        let s = cfg.shear_range;
        let shear = if s > 0.0 { rng.range(-s, s) } else { 0.0 };
        let z = cfg.zoom_range;
        let zoom = if z > 0.0 {
            rng.range(1.0 - z, 1.0 + z)
        } else {
            1.0
        };
        AffineParams {
            hflip,
            vflip,
            angle_deg,
            shear,
            zoom,
        }
    }

    /// Forward map about the image center: zoom · shear · rotate · flip.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let flip = [
            [if self.hflip { -1.0 } else { 1.0 }, 0.0],
            [0.0, if self.vflip { -1.0 } else { 1.0 }],
        ];
        let (sin, cos) = if self.angle_deg == 0.0 {
            (0.0, 1.0)
        } else {
            self.angle_deg.to_radians().sin_cos()
        };
        let rot = [[cos, sin], [-sin, cos]];
        let shear = [[1.0, self.shear], [0.0, 1.0]];
        let zoom = [[self.zoom, 0.0], [0.0, self.zoom]];
        mul(zoom, mul(shear, mul(rot, flip)))
    }
}

fn mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

/// Resamples every plane of `image` through `params` (inverse mapping, bilinear,
/// reflect padding), keeping the size and clamping to [0, 1].
pub fn apply_affine(image: &Tensor, params: &AffineParams) -> Tensor {
    let [n, c, h, w] = image.shape();
    let m = params.matrix();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);

    // Source taps are shared by all planes.
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            taps.push((
                reflect(y0, h) * w,
                reflect(y0 + 1, h) * w,
                reflect(x0, w),
                reflect(x0 + 1, w),
                fx,
                fy,
            ));
        }
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in image.data().chunks(h * w) {
        for &(r0, r1, c0, c1, fx, fy) in &taps {
            let top = plane[r0 + c0] * (1.0 - fx) + plane[r0 + c1] * fx;
            let bottom = plane[r1 + c0] * (1.0 - fx) + plane[r1 + c1] * fx;
            out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    Tensor::new(image.shape(), out).expect("same shape as input")
}

/// Draws fresh augmentation parameters and applies them. A disabled config returns
/// the sample unchanged.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut Rng) -> Sample {
    if cfg.is_identity() {
        return sample.clone();
    }
    let params = AffineParams::sample(cfg, rng);
    Sample {
        image: apply_affine(&sample.image, &params),
        label: sample.label,
        source_id: sample.source_id.clone(),
    }
}
