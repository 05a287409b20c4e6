use std::path::Path;
use std::process::{Command, Output};

use yolomed_core::datamodel::synthetic::{shapes_dataset, ShapesConfig};
use yolomed_core::datamodel::write_dataset;

fn yolomed(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_yolomed"));
    cmd.args(args).env("RUST_LOG", "warn");
    match seed {
        Some(s) => cmd.env("YOLOMED_SEED", s),
        None => cmd.env_remove("YOLOMED_SEED"),
    };
    let out = cmd.output().expect("run yolomed");
    assert!(
        out.status.success(),
        "yolomed {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn setup(dir: &Path) -> (String, String) {
    let data = dir.join("data");
    write_dataset(
        &shapes_dataset(&ShapesConfig {
            num_images: 10,
            ..ShapesConfig::default()
        })
        .unwrap(),
        &data,
    )
    .unwrap();
    let config = dir.join("cfg.yaml");
    std::fs::write(
        &config,
        "input_size: 64\nwidth_multiple: 0.125\nbatch_size: 4\nepochs: 1\nsplit_ratios: [0.6, 0.2, 0.2]\n",
    )
    .unwrap();
    (data.display().to_string(), config.display().to_string())
}

#[test]
fn train_eval_infer_bench_without_interaction_module() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = setup(dir.path());
    let run = dir.path().join("run");
    let run_s = run.display().to_string();
    yolomed(
        &[
            "train",
            "--config",
            &config,
            "--data",
            &data,
            "--out",
            &run_s,
            "--no-csti",
        ],
        None,
    );
    let ckpt = run.join("last.safetensors");
    assert!(
        ckpt.exists()
            && run.join("best.safetensors").exists()
            && run.join("train_log.csv").exists()
    );
    let ckpt_s = ckpt.display().to_string();

    let report = json(&yolomed(
        &[
            "eval", "--ckpt", &ckpt_s, "--data", &data, "--split", "test",
        ],
        None,
    ));
    assert_eq!(report["num_images"], 2);
    for key in ["ap50", "ap95", "ap50_95", "pa", "mean_iou"] {
        assert!(report[key].is_number(), "{key} missing from {report}");
    }

    let image = std::fs::read_dir(Path::new(&data).join("images"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let out_dir = dir.path().join("infer");
    yolomed(
        &[
            "infer",
            "--ckpt",
            &ckpt_s,
            "--image",
            &image.display().to_string(),
            "--out",
            &out_dir.display().to_string(),
        ],
        None,
    );
    let written: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    for suffix in ["_detections.json", "_mask.png", "_overlay.png"] {
        assert!(
            written.iter().any(|f| f.ends_with(suffix)),
            "no *{suffix} in {written:?}"
        );
    }

    let stats = json(&yolomed(
        &["bench", "--ckpt", &ckpt_s, "--iters", "10", "--warmup", "1"],
        None,
    ));
    assert_eq!(stats["iterations"], 10);
    assert!(stats["mean_fps"].as_f64().unwrap() > 0.0);

    // the module is absent, so the diagnostic must refuse rather than invent numbers
    let refused = Command::new(env!("CARGO_BIN_EXE_yolomed"))
        .args([
            "csti-corr",
            "--ckpt",
            &ckpt_s,
            "--image",
            &image.display().to_string(),
        ])
        .output()
        .unwrap();
    assert!(!refused.status.success());
}

#[test]
fn correlation_map_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = setup(dir.path());
    let run = dir.path().join("run");
    yolomed(
        &[
            "train",
            "--config",
            &config,
            "--data",
            &data,
            "--out",
            &run.display().to_string(),
        ],
        Some("123"),
    );
    let ckpt = run.join("last.safetensors");
    let meta = yolomed_core::engine::load_checkpoint(&ckpt).unwrap();
    assert_eq!(meta.config.seed, 123);

    let image = std::fs::read_dir(Path::new(&data).join("images"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let heatmap = dir.path().join("corr.png");
    let map = json(&yolomed(
        &[
            "csti-corr",
            "--ckpt",
            &ckpt.display().to_string(),
            "--image",
            &image.display().to_string(),
            "--heatmap",
            &heatmap.display().to_string(),
        ],
        None,
    ));
    assert_eq!(
        map["labels"],
        serde_json::json!(["det1", "det2", "det3", "seg"])
    );
    let values = map["values"].as_array().unwrap();
    for (i, row) in values.iter().enumerate() {
        assert!((row[i].as_f64().unwrap() - 1.0).abs() < 1e-6);
    }
    assert!(heatmap.exists());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_yolomed"))
        .args([
            "eval",
            "--ckpt",
            "missing.safetensors",
            "--data",
            ".",
            "--split",
            "holdout",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_yolomed"))
        .args(["train"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
