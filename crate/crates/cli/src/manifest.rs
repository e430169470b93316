use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trypoconv::data::SynthConfig;
use trypoconv::train::TrainConfig;
use trypoconv::ModelConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Where and how images were read for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Side length images are resized to on load.
    pub size: usize,
    /// Block-average factor applied after resizing; the model sees `size / downsample`.
    pub downsample: usize,
}

impl DataSpec {
    pub fn model_input(&self) -> usize {
        self.size / self.downsample
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcamSpec {
    pub tap: usize,
    pub alpha: f32,
    pub masks: Option<PathBuf>,
}

/// Fully resolved settings of one command, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcam: Option<GradcamSpec>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: "trypoconv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            synth: None,
            model: None,
            param_count: None,
            data: None,
            train: None,
            weights: None,
            gradcam: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Writes `manifest.json` into `dir`, refusing to replace another command's manifest.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            let existing = RunManifest::read(&path)?;
            if existing.command != self.command {
                bail!(
                    "{} already holds the manifest of a `{}` run",
                    dir.display(),
                    existing.command
                );
            }
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
