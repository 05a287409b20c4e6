use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::datamodel::ModelConfig;
use crate::error::{Error, Result};
use crate::model::YoloMed;

use super::optim::Sgd;

const OPTIM_PREFIX: &str = "optim.";

/// Training progress stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub lr: f64,
    /// Best validation `AP50 + meanIoU` so far.
    pub best_score: Option<f64>,
    /// Seed of the shuffle/augmentation stream; epoch `e` uses `seed + e`.
    pub seed: u64,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self {
            epoch: 0,
            step: 0,
            lr: 0.0,
            best_score: None,
            seed,
        }
    }
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub dtype: DType,
    pub train_state: Option<TrainState>,
    pub weights: BTreeMap<String, Tensor>,
    /// Momentum buffers keyed by parameter name.
    pub velocity: BTreeMap<String, Tensor>,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn dtype_name(dtype: DType) -> &'static str {
    match dtype {
        DType::F64 => "f64",
        DType::F16 => "f16",
        DType::BF16 => "bf16",
        _ => "f32",
    }
}

fn parse_dtype(s: &str) -> Option<DType> {
    match s {
        "f64" => Some(DType::F64),
        "f32" => Some(DType::F32),
        "f16" => Some(DType::F16),
        "bf16" => Some(DType::BF16),
        _ => None,
    }
}

/// Writes model weights (and buffers), the config and optional training state
/// to one safetensors archive.
pub fn save_checkpoint(
    path: &Path,
    model: &YoloMed,
    train_state: Option<&TrainState>,
    optimizer: Option<&Sgd>,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = model.store().snapshot().into_iter().collect();
    if let Some(opt) = optimizer {
        tensors.extend(
            opt.velocity()
                .iter()
                .map(|(n, t)| (format!("{OPTIM_PREFIX}{n}"), t.clone())),
        );
    }
    let mut meta = HashMap::new();
    meta.insert("config".to_string(), to_json(model.config())?);
    meta.insert("dtype".to_string(), dtype_name(model.dtype()).to_string());
    if let Some(state) = train_state {
        meta.insert("train_state".to_string(), to_json(state)?);
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    safetensors::serialize_to_file(tensors, Some(meta), path)
        .map_err(|e| ckpt_err(path, e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Serde(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| ckpt_err(path, e.to_string()))?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| ckpt_err(path, "missing metadata"))?;
    let config: ModelConfig = serde_json::from_str(
        meta.get("config")
            .ok_or_else(|| ckpt_err(path, "missing `config` metadata"))?,
    )
    .map_err(|e| ckpt_err(path, format!("bad config: {e}")))?;
    let dtype = meta
        .get("dtype")
        .and_then(|s| parse_dtype(s))
        .ok_or_else(|| ckpt_err(path, "missing or unknown `dtype` metadata"))?;
    let train_state = meta
        .get("train_state")
        .map(|s| serde_json::from_str(s))
        .transpose()
        .map_err(|e| ckpt_err(path, format!("bad train state: {e}")))?;
    let mut weights = BTreeMap::new();
    let mut velocity = BTreeMap::new();
    for (name, t) in candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)? {
        match name.strip_prefix(OPTIM_PREFIX) {
            Some(param) => velocity.insert(param.to_string(), t),
            None => weights.insert(name, t),
        };
    }
    Ok(Checkpoint {
        config,
        dtype,
        train_state,
        weights,
        velocity,
    })
}

/// Copies `weights` into the model. Names and shapes must match one to one;
/// otherwise nothing is written and every offending name is reported.
pub fn load_weights(model: &YoloMed, weights: &BTreeMap<String, Tensor>) -> Result<()> {
    let store = model.store();
    let mut mismatched = Vec::new();
    for (name, var, _) in store.iter() {
        match weights.get(name) {
            None => mismatched.push(format!("{name} (missing from checkpoint)")),
            Some(t) if t.dims() != var.dims() => mismatched.push(format!(
                "{name} (model {:?}, checkpoint {:?})",
                var.dims(),
                t.dims()
            )),
            Some(_) => {}
        }
    }
    for name in weights.keys() {
        if store.get(name).is_none() {
            mismatched.push(format!("{name} (not in model)"));
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::CheckpointMismatch(mismatched));
    }
    for (name, t) in weights {
        store.assign(name, t)?;
    }
    Ok(())
}

/// Builds the model described by a checkpoint and loads its weights.
/// `config` overrides the stored config, in which case architecture
/// differences surface as a [`Error::CheckpointMismatch`].
pub fn model_from_checkpoint(ckpt: &Checkpoint, config: Option<&ModelConfig>) -> Result<YoloMed> {
    let model = YoloMed::new(config.unwrap_or(&ckpt.config), ckpt.dtype)?;
    load_weights(&model, &ckpt.weights)?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<(YoloMed, Checkpoint)> {
    let ckpt = load_checkpoint(path)?;
    let model = model_from_checkpoint(&ckpt, None)?;
    Ok((model, ckpt))
}

/// Outcome of a name-matched pretrained import.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportReport {
    pub loaded: Vec<String>,
    /// Names in the file with no counterpart in the model.
    pub unmatched: Vec<String>,
    /// Names present in both but with different shapes (left untouched).
    pub shape_mismatch: Vec<String>,
    /// Model tensors the file did not provide.
    pub not_provided: Vec<String>,
}

/// Loads every tensor of a safetensors file whose name and shape match a
/// model parameter; everything else is reported, not fatal.
pub fn import_pretrained(model: &YoloMed, path: &Path) -> Result<ImportReport> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    let store = model.store();
    let mut report = ImportReport::default();
    let mut names: Vec<&String> = tensors.keys().collect();
    names.sort();
    for name in names {
        let t = &tensors[name];
        match store.get(name) {
            None => report.unmatched.push(name.clone()),
            Some(var) if var.dims() != t.dims() => report.shape_mismatch.push(name.clone()),
            Some(_) => {
                store.assign(name, t)?;
                report.loaded.push(name.clone());
            }
        }
    }
    report.not_provided = store
        .names()
        .filter(|n| !tensors.contains_key(*n))
        .map(str::to_string)
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(use_csti: bool) -> ModelConfig {
        ModelConfig {
            input_size: 64,
            width_multiple: 0.125,
            use_csti,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let model = YoloMed::new(&tiny(true), DType::F32).unwrap();
        let state = TrainState {
            epoch: 3,
            step: 12,
            lr: 0.005,
            best_score: Some(1.25),
            seed: 7,
        };
        save_checkpoint(&path, &model, Some(&state), None).unwrap();
        let (restored, ckpt) = load_model(&path).unwrap();
        assert_eq!(ckpt.train_state, Some(state));
        assert_eq!(ckpt.config, *model.config());
        for (name, t) in model.store().snapshot() {
            let a = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = restored
                .store()
                .get(&name)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();
            assert!(
                a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
                "{name}"
            );
        }
    }

    #[test]
    fn architecture_mismatch_lists_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        save_checkpoint(
            &path,
            &YoloMed::new(&tiny(false), DType::F32).unwrap(),
            None,
            None,
        )
        .unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        let err = model_from_checkpoint(&ckpt, Some(&tiny(true))).unwrap_err();
        match err {
            Error::CheckpointMismatch(names) => {
                assert!(!names.is_empty());
                assert!(names.iter().all(|n| n.starts_with("csti.")));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn import_reports_unmatched_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.safetensors");
        let model = YoloMed::new(&tiny(false), DType::F32).unwrap();
        let mut tensors: HashMap<String, Tensor> = HashMap::new();
        let first = model.store().names().next().unwrap().to_string();
        let t = model.store().get(&first).unwrap().ones_like().unwrap();
        tensors.insert(first.clone(), t);
        tensors.insert(
            "foreign.layer".into(),
            Tensor::zeros(3, DType::F32, &Device::Cpu).unwrap(),
        );
        candle_core::safetensors::save(&tensors, &path).unwrap();
        let report = import_pretrained(&model, &path).unwrap();
        assert_eq!(report.loaded, vec![first.clone()]);
        assert_eq!(report.unmatched, vec!["foreign.layer".to_string()]);
        assert_eq!(report.not_provided.len(), model.store().len() - 1);
        let v = model
            .store()
            .get(&first)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert!(v.iter().all(|&x| x == 1.0));
    }
}
