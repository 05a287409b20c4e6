use std::path::Path;

use candle_core::DType;
use image::{Rgb, RgbImage};
use yolomed_core::datamodel::synthetic::{shapes_dataset, ShapesConfig};
use yolomed_core::datamodel::write_dataset;
use yolomed_core::engine::{
    batch_loss, evaluate, evaluate_dataset, infer, infer_image, letterbox_sample, load_checkpoint,
    load_model, save_checkpoint, train_on, Split, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT,
    NONFINITE_DUMP, TRAIN_LOG, VAL_LOG,
};
use yolomed_core::{Dataset, Error, ImageSample, ModelConfig, YoloMed};

fn tiny(epochs: usize) -> ModelConfig {
    ModelConfig {
        input_size: 64,
        width_multiple: 0.125,
        batch_size: 4,
        epochs,
        eval_interval: 1,
        ..ModelConfig::default()
    }
}

fn shapes(n: usize) -> Dataset {
    shapes_dataset(&ShapesConfig {
        num_images: n,
        ..ShapesConfig::default()
    })
    .unwrap()
}

fn letterboxed(ds: &Dataset, size: usize) -> Vec<ImageSample> {
    ds.samples()
        .iter()
        .map(|s| letterbox_sample(s, size).0)
        .collect()
}

fn csv_rows(path: &Path) -> (Vec<String>, usize) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader
        .headers()
        .unwrap()
        .iter()
        .map(str::to_string)
        .collect();
    (header, reader.records().count())
}

#[test]
fn two_epoch_training_writes_checkpoints_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = shapes(6);
    let summary = train_on(&tiny(2), &ds, &ds, dir.path()).unwrap();
    // 6 images at batch 4: two steps per epoch
    assert_eq!(summary.steps, 4);
    assert!(summary.final_loss.is_finite());
    assert!(dir.path().join(LAST_CHECKPOINT).exists());
    assert!(dir.path().join(BEST_CHECKPOINT).exists());

    let (header, rows) = csv_rows(&dir.path().join(TRAIN_LOG));
    assert_eq!(
        header,
        ["step", "lr", "l_class", "l_obj", "l_box", "l_ce", "l_global"]
    );
    assert_eq!(rows, 4);
    let (_, val_rows) = csv_rows(&dir.path().join(VAL_LOG));
    assert_eq!(val_rows, 2);

    let ckpt = load_checkpoint(&summary.last_checkpoint).unwrap();
    let state = ckpt.train_state.unwrap();
    assert_eq!((state.epoch, state.step), (2, 4));
}

#[test]
fn same_seed_gives_identical_first_step() {
    let batch = letterboxed(&shapes(4), 64);
    let first_loss = |seed: u64| {
        let model = YoloMed::new(&ModelConfig { seed, ..tiny(1) }, DType::F32).unwrap();
        Trainer::new(model, 1).step(&batch).unwrap().loss.l_global
    };
    assert_eq!(first_loss(7).to_bits(), first_loss(7).to_bits());
    assert_ne!(first_loss(7), first_loss(8));
}

#[test]
fn ablated_model_has_no_interaction_parameters() {
    let model = YoloMed::new(
        &ModelConfig {
            use_csti: false,
            ..tiny(1)
        },
        DType::F32,
    )
    .unwrap();
    assert!(model.csti().is_none());
    assert!(model
        .store()
        .iter()
        .all(|(name, _, _)| !name.contains("csti")));
    let out = model
        .forward(
            &candle_core::Tensor::zeros((1, 3, 64, 64), DType::F32, &candle_core::Device::Cpu)
                .unwrap(),
            false,
        )
        .unwrap();
    assert!(out.csti.is_none());
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = shapes(4);
    let mut trainer = Trainer::new(YoloMed::new(&tiny(1), DType::F32).unwrap(), 1);
    trainer.step(&letterboxed(&ds, 64)).unwrap();
    let before = evaluate_dataset(trainer.model(), &ds).unwrap();

    let path = dir.path().join("ckpt.safetensors");
    save_checkpoint(
        &path,
        trainer.model(),
        Some(trainer.state()),
        Some(trainer.optimizer()),
    )
    .unwrap();
    let (restored, ckpt) = load_model(&path).unwrap();
    assert_eq!(ckpt.train_state.unwrap().step, 1);
    assert_eq!(evaluate_dataset(&restored, &ds).unwrap(), before);
}

#[test]
fn blank_image_inference_writes_artifacts_at_input_size() {
    let dir = tempfile::tempdir().unwrap();
    let model = YoloMed::new(&tiny(1), DType::F32).unwrap();
    let blank = RgbImage::from_pixel(100, 70, Rgb([0, 0, 0]));
    let out = infer_image(&model, "blank", &blank, dir.path()).unwrap();

    let overlay = image::open(&out.overlay_png).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (100, 70));
    let mask = image::open(&out.mask_png).unwrap();
    assert_eq!((mask.width(), mask.height()), (100, 70));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out.detections_json).unwrap()).unwrap();
    assert_eq!(json["width"], 100);
    assert_eq!(json["height"], 70);
    assert!(json["detections"].is_array());
}

#[test]
fn data_root_evaluation_and_inference_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_dataset(&shapes(10), &root).unwrap();
    let cfg = ModelConfig {
        split_ratios: [0.6, 0.2, 0.2],
        ..tiny(1)
    };
    let ckpt = dir.path().join("model.safetensors");
    save_checkpoint(&ckpt, &YoloMed::new(&cfg, DType::F32).unwrap(), None, None).unwrap();

    let report = evaluate(&ckpt, &root, Split::Test).unwrap();
    assert_eq!(report.num_images, 2);
    assert!((0.0..=1.0).contains(&report.ap50) && (0.0..=1.0).contains(&report.mean_iou));
    assert!(report.latency.is_none());

    let image = std::fs::read_dir(root.join("images"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let out = infer(&ckpt, &image, &dir.path().join("infer")).unwrap();
    assert!(out.overlay_png.exists() && out.mask_png.exists() && out.detections_json.exists());
}

#[test]
fn unreadable_image_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.safetensors");
    save_checkpoint(
        &ckpt,
        &YoloMed::new(&tiny(1), DType::F32).unwrap(),
        None,
        None,
    )
    .unwrap();
    let missing = dir.path().join("nope.png");
    let err = infer(&ckpt, &missing, dir.path()).unwrap_err();
    assert!(err.to_string().contains("nope.png"), "{err}");
}

#[test]
fn diverging_training_stops_with_a_batch_dump() {
    let dir = tempfile::tempdir().unwrap();
    let ds = shapes(4);
    let cfg = ModelConfig {
        lr0: 1e12,
        warmup_epochs: 0.0,
        ..tiny(20)
    };
    match train_on(&cfg, &ds, &ds, dir.path()) {
        Err(Error::NonFiniteLoss { ids, .. }) => {
            assert_eq!(ids.len(), 4);
            let dump: serde_json::Value = serde_json::from_str(
                &std::fs::read_to_string(dir.path().join(NONFINITE_DUMP)).unwrap(),
            )
            .unwrap();
            assert_eq!(dump["ids"].as_array().unwrap().len(), 4);
        }
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn step_loss_matches_batch_loss_before_update() {
    let batch = letterboxed(&shapes(2), 64);
    let model = YoloMed::new(&tiny(1), DType::F32).unwrap();
    let expected = batch_loss(&model, &batch, true).unwrap().breakdown.l_global;
    let model = YoloMed::new(&tiny(1), DType::F32).unwrap();
    let got = Trainer::new(model, 1).step(&batch).unwrap().loss.l_global;
    assert_eq!(got, expected);
}
