//! Synthetic "shapes" data: filled rectangles that serve as both box and mask targets.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoundingBox, Dataset, ImageSample, SegmentationMask};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ShapesConfig {
    pub num_images: usize,
    pub image_size: usize,
    pub min_side: usize,
    pub max_side: usize,
    pub max_objects: usize,
    pub seed: u64,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            num_images: 8,
            image_size: 64,
            min_side: 16,
            max_side: 32,
            max_objects: 2,
            seed: 0,
        }
    }
}

/// One image with exactly the given rectangles, `[x0, y0, x1, y1)` in pixels.
pub fn render_sample(id: &str, size: usize, rects: &[[usize; 4]], seed: u64) -> ImageSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = RgbImage::from_fn(size as u32, size as u32, |_, _| {
        let v = rng.random_range(30..70u8);
        Rgb([v, v / 2 + 10, v / 2 + 20])
    });
    let mut mask = SegmentationMask::zeros(size, size);
    let mut boxes = Vec::with_capacity(rects.len());
    for &[x0, y0, x1, y1] in rects {
        let color = Rgb([
            rng.random_range(180..=255u8),
            rng.random_range(120..=200u8),
            rng.random_range(60..=140u8),
        ]);
        for y in y0..y1 {
            for x in x0..x1 {
                image.put_pixel(x as u32, y as u32, color);
                mask.set(x, y, 1);
            }
        }
        boxes.push(BoundingBox::new(
            x0 as f64, y0 as f64, x1 as f64, y1 as f64, 0,
        ));
    }
    ImageSample {
        id: id.to_string(),
        image,
        boxes,
        mask,
    }
}

fn overlaps(a: &[usize; 4], b: &[usize; 4], gap: usize) -> bool {
    a[0] < b[2] + gap && b[0] < a[2] + gap && a[1] < b[3] + gap && b[1] < a[3] + gap
}

/// Random non-overlapping rectangles, one detection class, binary masks.
pub fn shapes_dataset(cfg: &ShapesConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = cfg.image_size;
    let max_side = cfg.max_side.min(size);
    let samples = (0..cfg.num_images)
        .map(|i| {
            let count = rng.random_range(1..=cfg.max_objects.max(1));
            let mut rects: Vec<[usize; 4]> = Vec::new();
            for _ in 0..50 {
                if rects.len() == count {
                    break;
                }
                let w = rng.random_range(cfg.min_side..=max_side);
                let h = rng.random_range(cfg.min_side..=max_side);
                let x0 = rng.random_range(0..=size - w);
                let y0 = rng.random_range(0..=size - h);
                let r = [x0, y0, x0 + w, y0 + h];
                if rects.iter().all(|o| !overlaps(o, &r, 2)) {
                    rects.push(r);
                }
            }
            render_sample(&format!("shape{i:03}"), size, &rects, rng.random())
        })
        .collect();
    Dataset::new(samples, 1, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_match_boxes() {
        let ds = shapes_dataset(&ShapesConfig::default()).unwrap();
        assert_eq!(ds.len(), 8);
        for s in ds.samples() {
            assert!(!s.boxes.is_empty());
            let area: f64 = s.boxes.iter().map(BoundingBox::area).sum();
            let fg = s.mask.data().iter().filter(|&&v| v == 1).count();
            assert_eq!(area as usize, fg);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = shapes_dataset(&ShapesConfig::default()).unwrap();
        let b = shapes_dataset(&ShapesConfig::default()).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.boxes, y.boxes);
            assert_eq!(x.image, y.image);
        }
    }
}
