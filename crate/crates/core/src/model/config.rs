use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::PoolMode;

/// Convolution widths of the five VGG16 blocks; every kernel is 3×3.
pub const VGG16_BLOCKS: [&[usize]; 5] = [
    &[64, 64],
    &[128, 128],
    &[256, 256, 256],
    &[512, 512, 512],
    &[512, 512, 512],
];

/// Allowed hidden widths for the fully convolutional head.
pub const HIDDEN_RANGE: std::ops::RangeInclusive<usize> = 32..=1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    /// Flatten the last block, then dense → ReLU → dropout → dense(1). Full model only.
    Flatten { hidden: usize },
    /// 1×1 conv → ReLU → global pool → dense → ReLU → dropout → dense(1).
    Conv {
        pool_mode: PoolMode,
        conv_width: usize,
        hidden: usize,
    },
}

impl Head {
    pub fn hidden(&self) -> usize {
        match *self {
            Head::Flatten { hidden } | Head::Conv { hidden, .. } => hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub blocks: usize,
    pub head: Head,
    pub dropout_rate: f32,
    pub input_size: usize,
}

impl ModelConfig {
    /// The architecture of each column of the parameter table: flatten head with
    /// 128 hidden units for five blocks, otherwise a conv head as wide as the last block.
    pub fn default_for(blocks: usize) -> Self {
        let head = if blocks == 5 {
            Head::Flatten { hidden: 128 }
        } else {
            let width = block_width(blocks.clamp(1, 5));
            Head::Conv {
                pool_mode: PoolMode::Avg,
                conv_width: width,
                hidden: width,
            }
        };
        ModelConfig {
            blocks,
            head,
            dropout_rate: 0.5,
            input_size: 224,
        }
    }

    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }

    pub fn with_dropout(mut self, rate: f32) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.blocks) {
            return Err(Error::Config(format!(
                "blocks must be in 1..=5, got {}",
                self.blocks
            )));
        }
        match self.head {
            Head::Flatten { hidden } => {
                if self.blocks != 5 {
                    return Err(Error::Config(format!(
                        "flatten head requires 5 blocks, got {}",
                        self.blocks
                    )));
                }
                if hidden == 0 {
                    return Err(Error::Config("hidden width must be positive".into()));
                }
            }
            Head::Conv {
                conv_width, hidden, ..
            } => {
                if !HIDDEN_RANGE.contains(&hidden) {
                    return Err(Error::Config(format!(
                        "conv head hidden width must be in [32, 1024], got {hidden}"
                    )));
                }
                if conv_width == 0 {
                    return Err(Error::Config("conv head width must be positive".into()));
                }
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        let factor = 1usize << self.blocks;
        if self.input_size == 0 || self.input_size % factor != 0 {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of 2^{} = {factor}",
                self.input_size, self.blocks
            )));
        }
        Ok(())
    }

    /// Channel count after the last conv block.
    pub fn base_width(&self) -> usize {
        block_width(self.blocks)
    }

    /// Spatial size of the feature map after the last block.
    pub fn final_map_size(&self) -> usize {
        self.input_size >> self.blocks
    }

    pub fn flatten_dim(&self) -> usize {
        self.base_width() * self.final_map_size() * self.final_map_size()
    }

    /// Parameter count from layer shapes alone, without allocating the model.
    pub fn param_count(&self) -> Result<usize> {
        Ok(super::layer_plan(self)?
            .iter()
            .map(|p| p.num_params())
            .sum())
    }

    /// Single-line `key=value` form stored in weight files.
    pub fn to_echo(&self) -> String {
        let head = match self.head {
            Head::Flatten { hidden } => format!("head=flatten hidden={hidden}"),
            Head::Conv {
                pool_mode,
                conv_width,
                hidden,
            } => format!("head=conv pool={pool_mode} conv_width={conv_width} hidden={hidden}"),
        };
        format!(
            "blocks={} {head} dropout={} input_size={}",
            self.blocks, self.dropout_rate, self.input_size
        )
    }

    pub fn parse_echo(text: &str) -> Result<Self> {
        let mut blocks = None;
        let mut head_kind = None;
        let mut pool = None;
        let mut conv_width = None;
        let mut hidden = None;
        let mut dropout = None;
        let mut input_size = None;
        let bad = |what: &str| Error::Config(format!("cannot parse config echo `{text}`: {what}"));
        for field in text.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(field))?;
            let num = || value.parse::<usize>().map_err(|_| bad(field));
            match key {
                "blocks" => blocks = Some(num()?),
                "head" => head_kind = Some(value.to_string()),
                "pool" => pool = Some(value.parse::<PoolMode>()?),
                "conv_width" => conv_width = Some(num()?),
                "hidden" => hidden = Some(num()?),
                "dropout" => dropout = Some(value.parse::<f32>().map_err(|_| bad(field))?),
                "input_size" => input_size = Some(num()?),
                _ => return Err(bad(field)),
            }
        }
        let hidden = hidden.ok_or_else(|| bad("missing hidden"))?;
        let head = match head_kind.as_deref() {
            Some("flatten") => Head::Flatten { hidden },
            Some("conv") => Head::Conv {
                pool_mode: pool.ok_or_else(|| bad("missing pool"))?,
                conv_width: conv_width.ok_or_else(|| bad("missing conv_width"))?,
                hidden,
            },
            _ => return Err(bad("missing or unknown head")),
        };
        Ok(ModelConfig {
            blocks: blocks.ok_or_else(|| bad("missing blocks"))?,
            head,
            dropout_rate: dropout.ok_or_else(|| bad("missing dropout"))?,
            input_size: input_size.ok_or_else(|| bad("missing input_size"))?,
        })
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_echo())
    }
}

fn block_width(blocks: usize) -> usize {
    *VGG16_BLOCKS[blocks - 1]
        .last()
        .expect("blocks are non-empty")
}
