use std::fs::File;
use std::path::{Path, PathBuf};

use candle_core::DType;
use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datamodel::{split_dataset, Dataset, ImageSample, ModelConfig};
use crate::error::{Error, Result};
use crate::losses::{assign_targets, global_loss, Assignment, LossBreakdown, LossOutput};
use crate::model::YoloMed;

use super::checkpoint::{save_checkpoint, TrainState};
use super::eval::evaluate_dataset;
use super::letterbox::{images_to_tensor, letterbox_sample};
use super::load_data_root;
use super::optim::Sgd;
use super::schedule::lr_schedule;

pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const VAL_LOG: &str = "val_log.csv";
pub const NONFINITE_DUMP: &str = "nonfinite_batch.json";

/// Loss of a batch of samples already letterboxed to the input size.
pub fn batch_loss(model: &YoloMed, batch: &[ImageSample], train: bool) -> Result<LossOutput> {
    let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
    let x = images_to_tensor(&images, model.dtype())?;
    let out = model.forward(&x, train)?;
    let grids = model.grids();
    let assignments: Vec<Assignment> = batch
        .iter()
        .map(|s| assign_targets(&s.boxes, &grids))
        .collect();
    let masks: Vec<_> = batch.iter().map(|s| s.mask.clone()).collect();
    global_loss(&out.raw, &out.seg, &assignments, &masks, model.config())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutcome {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Owns a model and its optimizer state; advances one SGD step at a time.
#[derive(Debug)]
pub struct Trainer {
    model: YoloMed,
    optimizer: Sgd,
    state: TrainState,
    steps_per_epoch: usize,
}

impl Trainer {
    pub fn new(model: YoloMed, steps_per_epoch: usize) -> Self {
        let cfg = model.config();
        let optimizer = Sgd::new(cfg.momentum, cfg.weight_decay);
        let state = TrainState::new(cfg.seed);
        Self {
            model,
            optimizer,
            state,
            steps_per_epoch: steps_per_epoch.max(1),
        }
    }

    pub fn model(&self) -> &YoloMed {
        &self.model
    }

    pub fn into_model(self) -> YoloMed {
        self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn optimizer(&self) -> &Sgd {
        &self.optimizer
    }

    /// Forward, backward and update on letterboxed samples. A non-finite
    /// loss leaves the weights untouched; the caller decides how to abort.
    pub fn step(&mut self, batch: &[ImageSample]) -> Result<StepOutcome> {
        let lr = lr_schedule(self.state.step, self.steps_per_epoch, self.model.config());
        let loss = batch_loss(&self.model, batch, true)?;
        let outcome = StepOutcome {
            step: self.state.step,
            lr,
            loss: loss.breakdown,
        };
        if !loss.breakdown.is_finite() {
            return Ok(outcome);
        }
        let grads = loss.total.backward()?;
        self.optimizer.step(self.model.store(), &grads, lr)?;
        self.state.step += 1;
        self.state.lr = lr;
        Ok(outcome)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.model, Some(&self.state), Some(&self.optimizer))
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: usize,
    pub final_loss: LossBreakdown,
    pub best_score: Option<f64>,
}

#[derive(Serialize)]
struct LogRow {
    step: usize,
    lr: f64,
    l_class: f64,
    l_obj: f64,
    l_box: f64,
    l_ce: f64,
    l_global: f64,
}

#[derive(Serialize)]
struct ValRow {
    epoch: usize,
    ap50: f64,
    mean_iou: f64,
    pa: f64,
    score: f64,
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    epoch: usize,
    batch: usize,
    step: usize,
    lr: f64,
    ids: &'a [String],
    loss: LossBreakdown,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Serde(format!("{}: {e}", path.display()))
}

/// Trains on `train_ds`, validating on `val_ds` every `eval_interval` epochs.
///
/// Writes `last.safetensors` after every epoch, `best.safetensors` whenever
/// validation `AP50 + meanIoU` improves, and one CSV row per step.
pub fn train_on(
    cfg: &ModelConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
    out_dir: &Path,
) -> Result<TrainSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let samples: Vec<ImageSample> = train_ds
        .samples()
        .iter()
        .map(|s| letterbox_sample(s, cfg.input_size).0)
        .collect();
    let batch_size = cfg.batch_size.max(1);
    let steps_per_epoch = samples.len().div_ceil(batch_size);
    let mut trainer = Trainer::new(YoloMed::new(cfg, DType::F32)?, steps_per_epoch);

    let log_path = out_dir.join(TRAIN_LOG);
    let val_path = out_dir.join(VAL_LOG);
    let mut log = csv_writer(&log_path)?;
    let mut val_log = csv_writer(&val_path)?;
    let last = out_dir.join(LAST_CHECKPOINT);
    let best = out_dir.join(BEST_CHECKPOINT);
    let mut final_loss = None;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for (bi, idx) in order.chunks(batch_size).enumerate() {
            let batch: Vec<ImageSample> = idx
                .iter()
                .map(|&i| {
                    if rng.random::<f64>() < cfg.hflip_prob {
                        samples[i].hflipped()
                    } else {
                        samples[i].clone()
                    }
                })
                .collect();
            let outcome = trainer.step(&batch)?;
            let l = outcome.loss;
            log.serialize(LogRow {
                step: outcome.step,
                lr: outcome.lr,
                l_class: l.l_class,
                l_obj: l.l_obj,
                l_box: l.l_box,
                l_ce: l.l_ce,
                l_global: l.l_global,
            })
            .map_err(|e| csv_err(&log_path, e))?;
            if !l.is_finite() {
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                let ids: Vec<String> = batch.iter().map(|s| s.id.clone()).collect();
                let dump = out_dir.join(NONFINITE_DUMP);
                let body = serde_json::to_string_pretty(&NonFiniteDump {
                    epoch,
                    batch: bi,
                    step: outcome.step,
                    lr: outcome.lr,
                    ids: &ids,
                    loss: l,
                })
                .map_err(|e| Error::Serde(e.to_string()))?;
                std::fs::write(&dump, body).map_err(|e| Error::io(&dump, e))?;
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    ids,
                    dump,
                });
            }
            final_loss = Some(l);
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        trainer.state.epoch = epoch + 1;

        let last_epoch = epoch + 1 == cfg.epochs;
        if (epoch + 1) % cfg.eval_interval.max(1) == 0 || last_epoch {
            let report = match evaluate_dataset(trainer.model(), val_ds) {
                Ok(r) => r,
                Err(Error::NoGroundTruth) => {
                    return Err(Error::Config(
                        "validation split has no ground-truth boxes".into(),
                    ))
                }
                Err(e) => return Err(e),
            };
            let score = report.ap50 + report.mean_iou;
            info!(
                "epoch {}: val AP50 {:.4} meanIoU {:.4}",
                epoch + 1,
                report.ap50,
                report.mean_iou
            );
            val_log
                .serialize(ValRow {
                    epoch: epoch + 1,
                    ap50: report.ap50,
                    mean_iou: report.mean_iou,
                    pa: report.pa,
                    score,
                })
                .map_err(|e| csv_err(&val_path, e))?;
            val_log.flush().map_err(|e| Error::io(&val_path, e))?;
            if trainer.state.best_score.is_none_or(|b| score > b) {
                trainer.state.best_score = Some(score);
                trainer.save(&best)?;
            }
        }
        trainer.save(&last)?;
    }

    Ok(TrainSummary {
        last_checkpoint: last,
        best_checkpoint: best,
        log: log_path,
        steps: trainer.state.step,
        final_loss: final_loss.ok_or_else(|| Error::Config("training ran zero steps".into()))?,
        best_score: trainer.state.best_score,
    })
}

/// Loads the dataset at `data_root`, splits it with `split_ratios` and `seed`,
/// and trains on the train part with validation on the val part.
pub fn train(cfg: &ModelConfig, data_root: &Path, out_dir: &Path) -> Result<TrainSummary> {
    let ds = load_data_root(data_root, cfg)?;
    let (train_ds, val_ds, _) = split_dataset(&ds, cfg.split_ratios, cfg.seed)?;
    info!(
        "training on {} images, validating on {}",
        train_ds.len(),
        val_ds.len()
    );
    train_on(cfg, &train_ds, &val_ds, out_dir)
}
