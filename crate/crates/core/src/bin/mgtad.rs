use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mgtad::augment::{augment_annotations, AugmentConfig};
use mgtad::data::{
    class_histogram, load_annotations, load_dataset_with, load_features, save_annotations, synth_generate,
    write_dataset, SynthSpec, Timing,
};
use mgtad::detection::{load_predictions, save_predictions, PredictionRecord};
use mgtad::diagnose::{bar_chart_svg, diagnose, write_svgs, BinSpec};
use mgtad::eval::evaluate;
use mgtad::infer::{detect, detect_stream, InferConfig};
use mgtad::model::{Model, ModelConfig};
use mgtad::train::{fit, TrainConfig};
use mgtad::{Error, Result};

#[derive(Parser)]
#[command(name = "mgtad", version, about = "Micro-gesture temporal action detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic long-tailed dataset.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-category instance histogram.
    Stats {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0)]
        num_classes: usize,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Replicate annotations of rare categories.
    Augment {
        #[arg(long, default_value_t = 100)]
        alpha: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of categories; defaults to the largest label plus one.
        #[arg(long)]
        num_classes: Option<usize>,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Annotation file to train on instead of DATA/gt.jsonl.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a model over feature files.
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// A feature file or a directory of them.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stream: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 28.0)]
        fps: f64,
        #[arg(long, default_value_t = 4)]
        stride: u32,
        /// Defaults to the feature file stem.
        #[arg(long)]
        video_id: Option<String>,
    },
    /// Precision, recall and F1 of predictions.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tiou: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error analysis of predictions.
    Diagnose {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tiou: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

/// Contents of `train --config`.
#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainFile {
    model: ModelConfig,
    train: TrainConfig,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn feature_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let io = |e| Error::Io {
        path: path.into(),
        source: e,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()).map_err(io))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "mgfb"))
        .collect();
    files.sort();
    Ok(files)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth { spec, seed, out } => {
            let spec: SynthSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SynthSpec::default(),
            };
            let ds = synth_generate(&spec, seed)?;
            write_dataset(&out, &ds.videos)?;
            log::info!("wrote {} videos to {}", ds.videos.len(), out.display());
        }
        Cmd::Stats { gt, num_classes, svg } => {
            let anns = load_annotations(&gt)?;
            let hist = class_histogram(&anns, num_classes);
            let total: usize = hist.iter().sum();
            let json = serde_json::json!({
                "videos": anns.len(),
                "instances": total,
                "per_category": hist,
            });
            println!("{}", serde_json::to_string_pretty(&json)?);
            if let Some(path) = svg {
                let labels: Vec<String> = (0..hist.len()).map(|c| c.to_string()).collect();
                let values: Vec<Option<f64>> = hist.iter().map(|&h| Some(h as f64)).collect();
                let max = hist.iter().copied().max().unwrap_or(0) as f64;
                fs::write(&path, bar_chart_svg("Instances per category", &labels, &values, max))
                    .map_err(|e| Error::Io { path, source: e })?;
            }
        }
        Cmd::Augment {
            alpha,
            input,
            out,
            plan,
            seed,
            num_classes,
        } => {
            let anns = load_annotations(&input)?;
            let k = num_classes.unwrap_or_else(|| {
                anns.iter()
                    .flat_map(|a| &a.instances)
                    .map(|i| i.label + 1)
                    .max()
                    .unwrap_or(0)
            });
            let (aug, p) = augment_annotations(&anns, &AugmentConfig { alpha, seed }, k)?;
            save_annotations(&out, &aug)?;
            if let Some(path) = plan {
                write_json(&path, &p)?;
            }
        }
        Cmd::Train {
            config,
            data,
            gt,
            out,
            trace,
        } => {
            let cfg: TrainFile = match config {
                Some(p) => read_json(&p)?,
                None => TrainFile::default(),
            };
            let anns = load_annotations(gt.unwrap_or_else(|| data.join("gt.jsonl")))?;
            let videos = load_dataset_with(&data, anns)?;
            let outcome = fit(&videos, &cfg.model, &cfg.train)?;
            outcome.model.save(&out)?;
            if let Some(path) = trace {
                write_json(&path, &outcome.trace)?;
            }
        }
        Cmd::Detect {
            model,
            features,
            out,
            stream,
            config,
            fps,
            stride,
            video_id,
        } => {
            let model = Model::load(&model)?;
            let cfg: InferConfig = match config {
                Some(p) => read_json(&p)?,
                None => InferConfig::default(),
            };
            let timing = Timing::new(fps, stride);
            let files = feature_files(&features)?;
            if video_id.is_some() && files.len() != 1 {
                return Err(Error::Config("--video-id needs a single feature file".into()));
            }
            let mut records = Vec::new();
            for f in files {
                let id = match &video_id {
                    Some(id) => id.clone(),
                    None => f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                };
                let grid = load_features(&f)?.to_grid();
                let dets = if stream {
                    detect_stream(&model, &grid, &timing, &cfg, cfg.hop())?
                } else {
                    detect(&model, &grid, &timing, &cfg)?
                };
                records.extend(dets.into_iter().map(|detection| PredictionRecord {
                    video_id: id.clone(),
                    detection,
                }));
            }
            save_predictions(&out, &records)?;
        }
        Cmd::Eval { preds, gt, tiou, out } => {
            let report = evaluate(&load_predictions(&preds)?, &load_annotations(&gt)?, tiou);
            println!(
                "P {:.4}  R {:.4}  F1 {:.2}%",
                report.metrics.precision, report.metrics.recall, report.f1_percent
            );
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
        }
        Cmd::Diagnose {
            preds,
            gt,
            tiou,
            out,
            svg,
        } => {
            let report = diagnose(&load_predictions(&preds)?, &load_annotations(&gt)?, tiou, &BinSpec::default())?;
            write_json(&out, &report)?;
            if let Some(dir) = svg {
                write_svgs(&report, dir)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
