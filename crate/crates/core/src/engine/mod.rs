//! Training loop, learning-rate schedule, checkpoints, evaluation and inference.

pub mod checkpoint;
pub mod eval;
pub mod infer;
pub mod letterbox;
pub mod optim;
pub mod schedule;
pub mod train;

use std::path::{Path, PathBuf};

use crate::datamodel::{load_dataset_with, Dataset, LoadOptions, ModelConfig};
use crate::error::{Error, Result};

pub use checkpoint::{
    import_pretrained, load_checkpoint, load_model, load_weights, model_from_checkpoint,
    save_checkpoint, Checkpoint, ImportReport, TrainState,
};
pub use eval::{
    evaluate, evaluate_dataset, evaluate_predictions, predict_samples, Prediction, Split,
};
pub use infer::{infer, infer_image, render_overlay, InferenceArtifacts};
pub use letterbox::{images_to_tensor, letterbox_sample, Letterbox};
pub use optim::Sgd;
pub use schedule::lr_schedule;
pub use train::{
    batch_loss, train, train_on, StepOutcome, TrainSummary, Trainer, BEST_CHECKPOINT,
    LAST_CHECKPOINT, NONFINITE_DUMP, TRAIN_LOG, VAL_LOG,
};

/// Environment variable that overrides `ModelConfig::seed`.
pub const SEED_ENV: &str = "YOLOMED_SEED";

/// Applies `YOLOMED_SEED` to `cfg` when set.
pub fn apply_seed_override(cfg: &mut ModelConfig) -> Result<()> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
    }
    Ok(())
}

/// The annotation file of a data root: `annotations.json`, or the only JSON file present.
pub fn annotation_file(root: &Path) -> Result<PathBuf> {
    let default = root.join("annotations.json");
    if default.is_file() {
        return Ok(default);
    }
    let jsons: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        })
        .collect();
    match jsons.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(Error::Annotation {
            path: default,
            message: "no annotation JSON found in the data root".into(),
        }),
        _ => Err(Error::Annotation {
            path: default,
            message:
                "several JSON files in the data root; name the box annotations `annotations.json`"
                    .into(),
        }),
    }
}

/// Loads the dataset under `root` with the class counts of `cfg`.
pub fn load_data_root(root: &Path, cfg: &ModelConfig) -> Result<Dataset> {
    let opts = LoadOptions {
        num_seg_classes: cfg.num_seg_classes,
        num_det_classes: Some(cfg.num_det_classes),
    };
    load_dataset_with(root, &annotation_file(root)?, &opts)
}
