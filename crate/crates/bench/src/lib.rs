//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yolomed_core::{BoundingBox, Detection, ModelConfig};

/// A reduced-width configuration that keeps CPU forward passes short.
pub fn bench_config(input_size: usize, use_dh: bool, use_csti: bool) -> ModelConfig {
    ModelConfig {
        input_size,
        width_multiple: 0.25,
        use_dh,
        use_csti,
        ..ModelConfig::default()
    }
}

fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> BoundingBox {
    let (x, y) = (
        rng.random_range(0.0..extent * 0.8),
        rng.random_range(0.0..extent * 0.8),
    );
    let (w, h) = (
        rng.random_range(4.0..extent * 0.2),
        rng.random_range(4.0..extent * 0.2),
    );
    BoundingBox::new(x, y, x + w, y + h, 0)
}

/// `images` images with `gts_per_image` ground-truth boxes and `dets_per_image`
/// scored detections, half of them jittered copies of ground truth.
pub fn random_instance(
    images: usize,
    gts_per_image: usize,
    dets_per_image: usize,
    seed: u64,
) -> (Vec<Vec<Detection>>, Vec<Vec<BoundingBox>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dets = Vec::with_capacity(images);
    let mut gts = Vec::with_capacity(images);
    for _ in 0..images {
        let g: Vec<BoundingBox> = (0..gts_per_image)
            .map(|_| random_box(&mut rng, 640.0))
            .collect();
        let d = (0..dets_per_image)
            .map(|i| {
                let bbox = if i % 2 == 0 && !g.is_empty() {
                    let b = g[i / 2 % g.len()];
                    let j = rng.random_range(-3.0..3.0);
                    BoundingBox::new(b.x_min + j, b.y_min + j, b.x_max + j, b.y_max + j, 0)
                } else {
                    random_box(&mut rng, 640.0)
                };
                Detection {
                    bbox,
                    score: rng.random_range(0.0..1.0),
                    class_id: 0,
                }
            })
            .collect();
        gts.push(g);
        dets.push(d);
    }
    (dets, gts)
}
