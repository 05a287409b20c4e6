//! Domain types, dataset ingestion and splitting.

mod config;
mod io;
mod split;
pub mod synthetic;

use std::collections::HashSet;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::ModelConfig;
pub use io::{load_dataset, load_dataset_with, read_rgb, write_dataset, LoadOptions};
pub use split::{split_dataset, split_sizes};

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub class_id: usize,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, class_id: usize) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
            class_id,
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64, class_id: usize) -> Self {
        Self::new(
            cx - w / 2.0,
            cy - h / 2.0,
            cx + w / 2.0,
            cy + h / 2.0,
            class_id,
        )
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn clamped(&self, width: f64, height: f64) -> Self {
        Self {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
            class_id: self.class_id,
        }
    }

    pub fn hflipped(&self, width: f64) -> Self {
        Self {
            x_min: width - self.x_max,
            x_max: width - self.x_min,
            ..*self
        }
    }
}

/// Per-pixel class map, row-major, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "mask data has {} values, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn max_class(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn hflipped(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self { data, ..*self }
    }
}

#[derive(Debug, Clone)]
pub struct ImageSample {
    pub id: String,
    pub image: RgbImage,
    pub boxes: Vec<BoundingBox>,
    pub mask: SegmentationMask,
}

impl ImageSample {
    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    pub fn height(&self) -> usize {
        self.image.height() as usize
    }

    pub fn hflipped(&self) -> Self {
        let w = self.width() as f64;
        Self {
            id: self.id.clone(),
            image: image::imageops::flip_horizontal(&self.image),
            boxes: self.boxes.iter().map(|b| b.hflipped(w)).collect(),
            mask: self.mask.hflipped(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<ImageSample>,
    num_det_classes: usize,
    num_seg_classes: usize,
}

impl Dataset {
    pub fn new(
        samples: Vec<ImageSample>,
        num_det_classes: usize,
        num_seg_classes: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate sample id `{}`", s.id)));
            }
            if s.mask.width() != s.width() || s.mask.height() != s.height() {
                return Err(Error::Shape(format!(
                    "sample `{}`: mask {}x{} does not match image {}x{}",
                    s.id,
                    s.mask.width(),
                    s.mask.height(),
                    s.width(),
                    s.height()
                )));
            }
            if let Some(b) = s.boxes.iter().find(|b| b.class_id >= num_det_classes) {
                return Err(Error::ClassOutOfRange {
                    class_id: b.class_id,
                    num_classes: num_det_classes,
                });
            }
            let m = s.mask.max_class() as usize;
            if m >= num_seg_classes {
                return Err(Error::ClassOutOfRange {
                    class_id: m,
                    num_classes: num_seg_classes,
                });
            }
        }
        Ok(Self {
            samples,
            num_det_classes,
            num_seg_classes,
        })
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_det_classes(&self) -> usize {
        self.num_det_classes
    }

    pub fn num_seg_classes(&self) -> usize {
        self.num_seg_classes
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    /// Builds a dataset from a subset of samples, keeping the class counts.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(samples, self.num_det_classes, self.num_seg_classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_moves_box_inside_image() {
        let b = BoundingBox::new(-5.0, 10.0, 50.0, 60.0, 0).clamped(100.0, 100.0);
        assert_eq!(b, BoundingBox::new(0.0, 10.0, 50.0, 60.0, 0));
    }

    #[test]
    fn hflip_is_an_involution() {
        let b = BoundingBox::new(3.0, 4.0, 10.0, 9.0, 1);
        assert_eq!(b.hflipped(32.0).hflipped(32.0), b);
        let m = SegmentationMask::new(3, 2, vec![1, 0, 0, 0, 1, 1]).unwrap();
        assert_eq!(m.hflipped().data(), &[0, 0, 1, 1, 1, 0]);
        assert_eq!(m.hflipped().hflipped(), m);
    }

    #[test]
    fn dataset_rejects_duplicate_ids_and_bad_masks() {
        let img = RgbImage::new(4, 4);
        let s = ImageSample {
            id: "a".into(),
            image: img.clone(),
            boxes: vec![],
            mask: SegmentationMask::zeros(4, 4),
        };
        assert!(Dataset::new(vec![s.clone(), s.clone()], 1, 2).is_err());
        let bad = ImageSample {
            mask: SegmentationMask::zeros(3, 4),
            ..s.clone()
        };
        assert!(Dataset::new(vec![bad], 1, 2).is_err());
        assert!(Dataset::new(vec![], 1, 2).is_err());
        assert!(Dataset::new(vec![s], 1, 2).is_ok());
    }
}
