//! Truncated VGG16 binary image classifiers built from scratch: layers with analytic
//! gradients, model construction and weight files, image data and augmentation,
//! training with accuracy/ROC-AUC evaluation, and Grad-CAM heatmaps.

pub mod data;
pub mod error;
pub mod gradcam;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_model, count_params, load_weights, save_weights, Model, ModelConfig};
pub use rng::Rng;
pub use tensor::Tensor;
