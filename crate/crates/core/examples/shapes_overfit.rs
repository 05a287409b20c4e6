//! Fits a small model to the eight-image shapes set and prints validation
//! metrics every 25 steps.
//!
//! `cargo run -p yolomed-core --example shapes_overfit -- [lr0] [width] [steps]`

use std::time::Instant;

use candle_core::DType;
use yolomed_core::datamodel::synthetic::{shapes_dataset, ShapesConfig};
use yolomed_core::engine::{evaluate_dataset, letterbox_sample, Trainer};
use yolomed_core::{ModelConfig, Result, YoloMed};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args()
        .nth(i)
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() -> Result<()> {
    let cfg = ModelConfig {
        input_size: 64,
        width_multiple: arg(2, 0.25),
        lr0: arg(1, 0.05),
        hflip_prob: 0.0,
        ..ModelConfig::default()
    };
    let steps: usize = arg(3, 300);
    let ds = shapes_dataset(&ShapesConfig::default())?;
    let batch: Vec<_> = ds
        .samples()
        .iter()
        .map(|s| letterbox_sample(s, cfg.input_size).0)
        .collect();
    let model = YoloMed::new(&cfg, DType::F32)?;
    println!("{} trainable parameters", model.store().num_trainable(""));

    let mut trainer = Trainer::new(model, 1);
    let start = Instant::now();
    for i in 0..steps {
        let outcome = trainer.step(&batch)?;
        if i % 25 == 0 || i + 1 == steps {
            let report = evaluate_dataset(trainer.model(), &ds)?;
            println!(
                "step {i:>4}  lr {:.5}  loss {:.4}  AP50 {:.4}  meanIoU {:.4}  {:.0}s",
                outcome.lr,
                outcome.loss.l_global,
                report.ap50,
                report.mean_iou,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
