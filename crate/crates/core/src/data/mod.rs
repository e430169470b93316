//! Labelled images: directory ingestion, resizing, augmentation and a synthetic
//! hole-cluster pattern generator.

mod augment;
mod dataset;
pub mod image;
mod synth;

pub use augment::{apply_affine, augment, AffineParams, AugmentConfig};
pub use dataset::{
    list_pngs, load_dataset, load_dataset_partial, load_mask, write_synthetic, Dataset, MASK_DIR,
};
pub use image::{downsample, resize_bilinear};
pub use synth::{synth_generate, SynthConfig, SynthSet};

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Neutral = 0,
    Trypophobic = 1,
}

impl Label {
    pub fn as_f32(self) -> f32 {
        self as u8 as f32
    }

    pub fn is_positive(self) -> bool {
        self == Label::Trypophobic
    }

    /// Class folder name in the on-disk layout.
    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Neutral => "neutral",
            Label::Trypophobic => "trypophobic",
        }
    }
}

/// One image in [0, 1] with shape (1, 3, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: Label,
    pub source_id: String,
}
