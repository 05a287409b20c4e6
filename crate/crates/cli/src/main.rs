use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use yolomed_core::engine::{self, Split};
use yolomed_core::metrics::{benchmark_model, csti_correlation_map, render_heatmap};
use yolomed_core::{ImageSample, ModelConfig, SegmentationMask};

#[derive(Parser)]
#[command(
    name = "yolomed",
    version,
    about = "Joint polyp detection and segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a data root (images/, masks/, annotation JSON).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop the cross-scale task-interaction module.
        #[arg(long)]
        no_csti: bool,
        /// Use a single coupled 1x1 detection head.
        #[arg(long)]
        no_dh: bool,
    },
    /// Evaluate a checkpoint on one split; prints the report as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detections JSON, mask PNG and overlay PNG for one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-image forward latency.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
    /// Correlation of the interaction module's four outputs for one image.
    CstiCorr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Heatmap PNG destination.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    let mut cfg = match path {
        Some(p) => ModelConfig::from_yaml_file(p)?,
        None => ModelConfig::default(),
    };
    engine::apply_seed_override(&mut cfg)?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            no_csti,
            no_dh,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.use_csti &= !no_csti;
            cfg.use_dh &= !no_dh;
            let summary = engine::train(&cfg, &data, &out).context("training failed")?;
            println!("steps: {}", summary.steps);
            println!("last checkpoint: {}", summary.last_checkpoint.display());
            println!("best checkpoint: {}", summary.best_checkpoint.display());
            println!("log: {}", summary.log.display());
        }
        Command::Eval {
            ckpt,
            data,
            split,
            out,
        } => {
            let split: Split = split.parse()?;
            let report = engine::evaluate(&ckpt, &data, split)?;
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&report)?)
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            print_json(&report)?;
        }
        Command::Infer { ckpt, image, out } => {
            let artifacts = engine::infer(&ckpt, &image, &out)?;
            println!("{} detections", artifacts.prediction.detections.len());
            for p in [
                &artifacts.detections_json,
                &artifacts.mask_png,
                &artifacts.overlay_png,
            ] {
                println!("wrote {}", p.display());
            }
        }
        Command::Bench {
            ckpt,
            iters,
            warmup,
        } => {
            let (model, _) = engine::load_model(&ckpt)?;
            let stats = benchmark_model(&model, model.config().input_size, warmup, iters)?;
            print_json(&stats)?;
        }
        Command::CstiCorr {
            ckpt,
            image,
            heatmap,
        } => {
            let (model, _) = engine::load_model(&ckpt)?;
            let img = yolomed_core::datamodel::read_rgb(&image)?;
            let sample = ImageSample {
                id: "input".into(),
                mask: SegmentationMask::zeros(img.width() as usize, img.height() as usize),
                image: img,
                boxes: Vec::new(),
            };
            let map = csti_correlation_map(&model, &sample)?;
            if let Some(path) = heatmap {
                render_heatmap(&map, 64, &path)?;
            }
            print_json(&map)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
