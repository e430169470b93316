use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use rayon::prelude::*;
use trypoconv::data::image::{read_rgb, write_gray, write_rgb};
use trypoconv::data::{
    downsample, load_dataset_partial, load_mask, resize_bilinear, synth_generate, write_synthetic,
    AugmentConfig, Sample, SynthConfig,
};
use trypoconv::gradcam::{gradcam, heatmap_image, localization_score, overlay};
use trypoconv::model::read_weights;
use trypoconv::nn::{sigmoid, Mode};
use trypoconv::train::{evaluate, fmt_auc, OptimizerKind, TrainConfig, DECISION_THRESHOLD};
use trypoconv::{build_model, load_weights, save_weights, Model, ModelConfig, Rng};

use crate::manifest::{DataSpec, GradcamSpec, RunManifest, MANIFEST_FILE};
use crate::{
    usage, CmdResult, EvalArgs, GradcamArgs, OptimizerArg, ParamsArgs, SynthArgs, TrainArgs,
    WeightsArgs,
};

pub const HISTORY_FILE: &str = "history.csv";
pub const WEIGHTS_FILE: &str = "model.weights";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const LOCALIZATION_FILE: &str = "localization.csv";

/// Stream index reserved for weight initialization, apart from the shuffle and
/// augmentation streams derived from the same seed.
const INIT_STREAM: u64 = u64::MAX - 1;

/// `17926209` → `17,926,209`.
pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Into::into)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Into::into)
}

fn load_samples(root: &Path, spec: &DataSpec) -> CmdResult<Vec<Sample>> {
    let ds = load_dataset_partial(root, spec.size)?;
    if !ds.skipped.is_empty() {
        warn!(
            "{}: skipped {} undecodable file(s)",
            root.display(),
            ds.skipped.len()
        );
    }
    if ds.samples.iter().all(|s| s.label == ds.samples[0].label) {
        warn!(
            "{}: only one class present; AUC is undefined",
            root.display()
        );
    }
    reduce(ds.samples, spec.downsample)
}

fn reduce(samples: Vec<Sample>, factor: usize) -> CmdResult<Vec<Sample>> {
    if factor == 1 {
        return Ok(samples);
    }
    samples
        .iter()
        .map(|s| downsample(s, factor).map_err(Into::into))
        .collect()
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        emit_masks: !a.no_masks,
        ..SynthConfig::new(a.n_trypo, a.n_neutral, a.size, a.seed)
    };
    cfg.validate().map_err(usage)?;
    if a.out.exists() {
        let mut entries =
            fs::read_dir(&a.out).with_context(|| format!("reading {}", a.out.display()))?;
        if entries.next().is_some() {
            return Err(anyhow!("{} is not empty", a.out.display()).into());
        }
    }
    let set = synth_generate(&cfg)?;
    write_synthetic(&a.out, &set)?;
    let mut manifest = RunManifest::new("synth");
    manifest.synth = Some(cfg);
    manifest.write(&a.out)?;
    println!(
        "wrote {} trypophobic and {} neutral images of {}x{} to {}",
        cfg.n_trypo,
        cfg.n_neutral,
        cfg.size,
        cfg.size,
        a.out.display()
    );
    Ok(())
}

fn train_manifest(a: &TrainArgs) -> CmdResult<RunManifest> {
    if let Some(path) = &a.from_manifest {
        let m = RunManifest::read(path).map_err(|e| crate::Failure::Usage(e))?;
        if m.command != "train" || m.model.is_none() || m.train.is_none() || m.data.is_none() {
            return Err(usage(format!(
                "{} does not describe a training run",
                path.display()
            )));
        }
        return Ok(m);
    }
    if a.size % a.downsample != 0 {
        return Err(usage(format!(
            "--size {} is not divisible by --downsample {}",
            a.size, a.downsample
        )));
    }
    let data = DataSpec {
        train: a.data.clone(),
        val: a.val.clone(),
        size: a.size,
        downsample: a.downsample,
    };
    let model = a.model.resolve(data.model_input())?;
    let train = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::adam(),
            OptimizerArg::Sgd => OptimizerKind::sgd(),
        },
        seed: a.seed,
        augment: if a.no_augment {
            AugmentConfig::none()
        } else {
            AugmentConfig::default()
        },
    };
    let mut m = RunManifest::new("train");
    m.param_count = Some(model.param_count()?);
    m.model = Some(model);
    m.train = Some(train);
    m.data = Some(data);
    Ok(m)
}

pub fn train(a: &TrainArgs) -> CmdResult {
    let manifest = train_manifest(a)?;
    let (model_cfg, train_cfg, data) = match (&manifest.model, &manifest.train, &manifest.data) {
        (Some(m), Some(t), Some(d)) => (*m, *t, d.clone()),
        _ => unreachable!("train manifests carry model, train and data sections"),
    };
    model_cfg.validate().map_err(usage)?;
    train_cfg.validate().map_err(usage)?;
    let train_root = data
        .train
        .clone()
        .ok_or_else(|| usage("the manifest names no training data"))?;

    let train_set = load_samples(&train_root, &data)?;
    let val_set = match &data.val {
        Some(root) => load_samples(root, &data)?,
        None => Vec::new(),
    };
    create_dir(&a.out)?;
    manifest.write(&a.out)?;

    let model = build_model(&model_cfg, &mut Rng::new(train_cfg.seed).fork(INIT_STREAM))?;
    println!("model      {model_cfg}");
    println!("parameters {}", group_thousands(model.num_params()));
    info!(
        "training on {} images ({} validation) for {} epochs",
        train_set.len(),
        val_set.len(),
        train_cfg.epochs
    );
    let (model, history) = trypoconv::train::train(model, &train_set, &val_set, &train_cfg)?;
    save_weights(&model, a.out.join(WEIGHTS_FILE))?;
    write_text(&a.out.join(HISTORY_FILE), &history.to_csv())?;
    if let Some(last) = history.last() {
        let mut line = format!(
            "epoch {}: train loss {:.6} acc {:.6}",
            last.epoch, last.train_loss, last.train_accuracy
        );
        if let Some(v) = &last.validation {
            let _ = write!(line, ", val acc {:.6} auc {}", v.accuracy, fmt_auc(v.auc));
        }
        println!("{line}");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Trained model plus the image geometry it was trained with.
fn load_trained(w: &WeightsArgs) -> CmdResult<(Model, DataSpec)> {
    let manifest_path = w.manifest.clone().or_else(|| {
        let p = w
            .weights
            .parent()
            .unwrap_or(Path::new(""))
            .join(MANIFEST_FILE);
        p.exists().then_some(p)
    });
    let (config, spec) = match manifest_path {
        Some(path) => {
            let m = RunManifest::read(&path)?;
            match (m.model, m.data) {
                (Some(model), Some(data)) => (model, data),
                _ => return Err(usage(format!("{} has no model section", path.display()))),
            }
        }
        None => {
            let config = read_weights(&w.weights)?.config;
            let spec = DataSpec {
                train: None,
                val: None,
                size: config.input_size,
                downsample: 1,
            };
            (config, spec)
        }
    };
    let model = load_weights(&w.weights, &config)?;
    Ok((model, spec))
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let (model, spec) = load_trained(&a.weights)?;
    let samples = load_samples(&a.data, &spec)?;
    let m = evaluate(&model, &samples)?;
    let c = m.confusion;
    println!("samples    {}", c.total());
    println!("accuracy   {:.6}", m.accuracy);
    println!("auc        {}", fmt_auc(m.auc));
    println!("loss       {:.6}", m.loss);
    println!("confusion  predicted trypophobic / neutral");
    println!("  trypophobic  {:>6} {:>6}", c.tp, c.fn_);
    println!("  neutral      {:>6} {:>6}", c.fp, c.tn);
    if let Some(out) = &a.out {
        create_dir(out)?;
        let auc = m
            .auc
            .map_or_else(|| "undefined".to_string(), |v| v.to_string());
        write_text(
            &out.join(METRICS_FILE),
            &format!(
                "samples,accuracy,auc,loss,tp,fp,tn,fn\n{},{},{},{},{},{},{},{}\n",
                c.total(),
                m.accuracy,
                auc,
                m.loss,
                c.tp,
                c.fp,
                c.tn,
                c.fn_
            ),
        )?;
        write_text(
            &out.join(CONFUSION_FILE),
            &format!(
                "actual,predicted_trypophobic,predicted_neutral\ntrypophobic,{},{}\nneutral,{},{}\n",
                c.tp, c.fn_, c.fp, c.tn
            ),
        )?;
        let mut manifest = RunManifest::new("eval");
        manifest.model = Some(*model.config());
        manifest.data = Some(DataSpec {
            train: None,
            val: Some(a.data.clone()),
            ..spec
        });
        manifest.weights = Some(a.weights.weights.clone());
        manifest.write(out)?;
    }
    Ok(())
}

struct Explained {
    name: String,
    label: Option<&'static str>,
    probability: f64,
    localization: Option<f64>,
    heatmap: image::GrayImage,
    overlay: image::RgbImage,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

pub fn gradcam_cmd(a: &GradcamArgs) -> CmdResult {
    let (model, spec) = load_trained(&a.weights)?;
    let blocks = model.config().blocks;
    let tap = a.tap.unwrap_or(blocks);
    if !(1..=blocks).contains(&tap) {
        return Err(usage(format!(
            "no tap {tap}: the model has blocks 1..={blocks}"
        )));
    }
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(usage(format!("--alpha must be in [0, 1], got {}", a.alpha)));
    }

    let inputs: Vec<(Sample, Option<&'static str>)> = match &a.data {
        Some(root) => load_samples(root, &spec)?
            .into_iter()
            .map(|s| {
                let label = s.label.dir_name();
                (s, Some(label))
            })
            .collect(),
        None => {
            let mut v = Vec::new();
            for path in &a.image {
                let img = resize_bilinear(&read_rgb(path)?, spec.size, spec.size);
                let sample = Sample {
                    image: img,
                    label: trypoconv::data::Label::Neutral,
                    source_id: path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                };
                v.push((reduce(vec![sample], spec.downsample)?.remove(0), None));
            }
            v
        }
    };
    let input_size = model.config().input_size;
    let explained: Vec<Explained> = inputs
        .par_iter()
        .map(|(s, label)| -> CmdResult<Explained> {
            let logit = model
                .forward(&s.image, Mode::Eval, &mut Rng::new(0))?
                .data()[0];
            let heat = gradcam(&model, &s.image, tap)?;
            let localization = match &a.masks {
                Some(dir) => {
                    let path: PathBuf = dir.join(format!("{}.png", s.source_id));
                    if path.exists() {
                        Some(localization_score(&heat, &load_mask(&path, input_size)?)?)
                    } else {
                        warn!("no mask for {}", s.source_id);
                        None
                    }
                }
                None => None,
            };
            Ok(Explained {
                name: s.source_id.clone(),
                label: *label,
                probability: sigmoid(logit as f64),
                localization,
                heatmap: heatmap_image(&heat),
                overlay: overlay(&s.image, &heat, a.alpha)?,
            })
        })
        .collect::<CmdResult<_>>()?;

    create_dir(&a.out)?;
    for e in &explained {
        write_gray(&a.out.join(format!("{}.heatmap.png", e.name)), &e.heatmap)?;
        write_rgb(&a.out.join(format!("{}.overlay.png", e.name)), &e.overlay)?;
    }
    if a.masks.is_some() {
        let mut csv = String::from("image,label,probability,predicted,localization\n");
        let mut hits = Vec::new();
        for e in &explained {
            let predicted = if e.probability >= DECISION_THRESHOLD {
                "trypophobic"
            } else {
                "neutral"
            };
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                e.name,
                e.label.unwrap_or(""),
                e.probability,
                predicted,
                e.localization.map_or_else(String::new, |v| v.to_string())
            );
            if e.label == Some("trypophobic") && predicted == "trypophobic" {
                hits.extend(e.localization);
            }
        }
        write_text(&a.out.join(LOCALIZATION_FILE), &csv)?;
        match median(&mut hits) {
            Some(m) => println!(
                "median localization {m:.6} over {} correctly classified trypophobic images",
                hits.len()
            ),
            None => println!(
                "median localization undefined: no correctly classified trypophobic images"
            ),
        }
    }
    let mut manifest = RunManifest::new("gradcam");
    manifest.model = Some(*model.config());
    manifest.data = Some(DataSpec {
        train: None,
        val: a.data.clone(),
        ..spec
    });
    manifest.weights = Some(a.weights.weights.clone());
    manifest.gradcam = Some(GradcamSpec {
        tap,
        alpha: a.alpha,
        masks: a.masks.clone(),
    });
    manifest.write(&a.out)?;
    println!("wrote {} heatmaps to {}", explained.len(), a.out.display());
    Ok(())
}

pub fn params(a: &ParamsArgs) -> CmdResult {
    let mut rows: Vec<(String, ModelConfig)> = (1..=5)
        .map(|k| {
            (
                format!("{k}"),
                ModelConfig::default_for(k).with_input_size(a.size),
            )
        })
        .collect();
    if a.model.any_set() {
        rows.push(("custom".into(), a.model.resolve(a.size)?));
    }
    println!("{:<8} {:<8} {:>12}  config", "blocks", "head", "params");
    for (label, cfg) in rows {
        cfg.validate().map_err(usage)?;
        let head = match cfg.head {
            trypoconv::model::Head::Flatten { .. } => "flatten",
            trypoconv::model::Head::Conv { .. } => "conv",
        };
        println!(
            "{:<8} {:<8} {:>12}  {}",
            label,
            head,
            group_thousands(cfg.param_count()?),
            cfg
        );
    }
    Ok(())
}
