//! `trypoconv`: synthesize data, train, evaluate and explain truncated-VGG16 classifiers.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trypoconv::model::{Head, ModelConfig};
use trypoconv::nn::PoolMode;

/// Failure classes mapped to exit codes 1 (usage) and 2 (runtime).
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<trypoconv::Error> for Failure {
    fn from(e: trypoconv::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow::anyhow!("{msg}"))
}

#[derive(Debug, Parser)]
#[command(
    name = "trypoconv",
    version,
    about = "Truncated VGG16 trypophobia classifiers"
)]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "TRYPOCONV_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic hole-cluster dataset in the class-folder layout.
    Synth(SynthArgs),
    /// Train a model and write weights, history and manifest.
    Train(TrainArgs),
    /// Report accuracy, AUC and confusion of trained weights on a dataset.
    Eval(EvalArgs),
    /// Write Grad-CAM heatmaps and overlays, with localization scores given masks.
    Gradcam(GradcamArgs),
    /// Print parameter counts of the five default architectures.
    Params(ParamsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Conv,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Avg,
    Max,
}

impl From<PoolArg> for PoolMode {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Avg => PoolMode::Avg,
            PoolArg::Max => PoolMode::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Number of VGG16 blocks kept [default: 5].
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub blocks: Option<u8>,
    /// Classifier head; defaults to flatten for 5 blocks and conv otherwise.
    #[arg(long, value_enum)]
    pub head: Option<HeadArg>,
    /// Global pooling of the conv head.
    #[arg(long, value_enum)]
    pub pool: Option<PoolArg>,
    /// Hidden dense width; defaults to 128 (flatten) or the last block's width (conv).
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f32,
}

impl ModelArgs {
    pub fn any_set(&self) -> bool {
        self.blocks.is_some() || self.head.is_some() || self.pool.is_some() || self.hidden.is_some()
    }

    pub fn resolve(&self, input_size: usize) -> CmdResult<ModelConfig> {
        let blocks = self.blocks.unwrap_or(5) as usize;
        let default_head = if blocks == 5 {
            HeadArg::Flatten
        } else {
            HeadArg::Conv
        };
        let head = match self.head.unwrap_or(default_head) {
            HeadArg::Flatten => {
                if self.pool.is_some() {
                    return Err(usage("--pool applies to the conv head only"));
                }
                Head::Flatten {
                    hidden: self.hidden.unwrap_or(128),
                }
            }
            HeadArg::Conv => {
                let width = ModelConfig::default_for(blocks).base_width();
                Head::Conv {
                    pool_mode: self.pool.unwrap_or(PoolArg::Avg).into(),
                    conv_width: width,
                    hidden: self.hidden.unwrap_or(width),
                }
            }
        };
        let config = ModelConfig {
            blocks,
            head,
            dropout_rate: self.dropout,
            input_size,
        };
        config.validate().map_err(usage)?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output dataset root; must be absent or empty.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_trypo: usize,
    #[arg(long, default_value_t = 200)]
    pub n_neutral: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip writing hole masks.
    #[arg(long)]
    pub no_masks: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset root with `trypophobic/` and `neutral/` folders.
    #[arg(long, required_unless_present = "from_manifest")]
    pub data: Option<PathBuf>,
    /// Validation dataset evaluated after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Repeat the run described by a manifest; all other settings come from it.
    #[arg(long, conflicts_with_all = ["data", "val"])]
    pub from_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Side length images are resized to on load.
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    #[arg(long, default_value_t = 1, value_parser = parse_downsample)]
    pub downsample: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train without augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Clone, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Training manifest; defaults to `manifest.json` beside the weights, then to the
    /// configuration stored in the weight file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub weights: WeightsArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for metrics.csv and confusion.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcamArgs {
    #[command(flatten)]
    pub weights: WeightsArgs,
    /// Dataset root to explain every image of.
    #[arg(long, required_unless_present = "image", conflicts_with = "image")]
    pub data: Option<PathBuf>,
    /// Individual PNG files.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    /// Block whose pooled output is explained; defaults to the deepest.
    #[arg(long)]
    pub tap: Option<usize>,
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f32,
    /// Folder of `<image name>.png` masks; adds localization.csv.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ParamsArgs {
    /// Input side length (affects the flatten head only).
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    /// Any of these adds a custom row.
    #[command(flatten)]
    pub model: ModelArgs,
}

fn parse_downsample(s: &str) -> Result<usize, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        "4" => Ok(4),
        other => Err(format!("expected 1, 2 or 4, got `{other}`")),
    }
}

fn run(cli: Cli) -> CmdResult {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcam(a) => commands::gradcam_cmd(&a),
        Command::Params(a) => commands::params(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
