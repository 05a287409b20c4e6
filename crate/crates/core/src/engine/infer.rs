use std::path::{Path, PathBuf};

use image::{GrayImage, Rgb, RgbImage};
use serde::Serialize;

use crate::datamodel::{read_rgb, ImageSample, SegmentationMask};
use crate::decoders::Detection;
use crate::error::{Error, Result};
use crate::model::YoloMed;

use super::checkpoint::load_model;
use super::eval::{predict_samples, Prediction};

const MASK_TINT: [u8; 3] = [0, 200, 80];
const BOX_COLOR: Rgb<u8> = Rgb([255, 40, 40]);

#[derive(Debug, Clone)]
pub struct InferenceArtifacts {
    pub detections_json: PathBuf,
    pub mask_png: PathBuf,
    pub overlay_png: PathBuf,
    pub prediction: Prediction,
}

#[derive(Serialize)]
struct DetectionRecord {
    class_id: usize,
    score: f64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Serialize)]
struct DetectionFile<'a> {
    id: &'a str,
    width: usize,
    height: usize,
    detections: Vec<DetectionRecord>,
}

/// Mask tinted over foreground pixels and 2 px box outlines, at the image's resolution.
pub fn render_overlay(
    image: &RgbImage,
    detections: &[Detection],
    mask: &SegmentationMask,
) -> RgbImage {
    let mut out = image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if mask.get(x as usize, y as usize) > 0 {
            for c in 0..3 {
                p[c] = ((p[c] as u16 * 3 + MASK_TINT[c] as u16 * 2) / 5) as u8;
            }
        }
    }
    let (w, h) = (out.width() as i64, out.height() as i64);
    for d in detections {
        let (x0, y0) = (d.bbox.x_min.floor() as i64, d.bbox.y_min.floor() as i64);
        let (x1, y1) = (
            d.bbox.x_max.ceil() as i64 - 1,
            d.bbox.y_max.ceil() as i64 - 1,
        );
        for y in y0..=y1 {
            for x in x0..=x1 {
                let edge = x - x0 < 2 || x1 - x < 2 || y - y0 < 2 || y1 - y < 2;
                if edge && (0..w).contains(&x) && (0..h).contains(&y) {
                    out.put_pixel(x as u32, y as u32, BOX_COLOR);
                }
            }
        }
    }
    out
}

/// Predicts on one image and writes `{id}_detections.json`, `{id}_mask.png`
/// and `{id}_overlay.png` into `out_dir`.
pub fn infer_image(
    model: &YoloMed,
    id: &str,
    image: &RgbImage,
    out_dir: &Path,
) -> Result<InferenceArtifacts> {
    let sample = ImageSample {
        id: id.to_string(),
        image: image.clone(),
        boxes: Vec::new(),
        mask: SegmentationMask::zeros(image.width() as usize, image.height() as usize),
    };
    let prediction = predict_samples(model, &[sample], model.config().infer_conf_thresh)?
        .pop()
        .expect("one prediction per sample");
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let detections_json = out_dir.join(format!("{id}_detections.json"));
    let file = DetectionFile {
        id,
        width: image.width() as usize,
        height: image.height() as usize,
        detections: prediction
            .detections
            .iter()
            .map(|d| DetectionRecord {
                class_id: d.class_id,
                score: d.score,
                bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
            })
            .collect(),
    };
    let body = serde_json::to_string_pretty(&file).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&detections_json, body).map_err(|e| Error::io(&detections_json, e))?;

    let mask_png = out_dir.join(format!("{id}_mask.png"));
    let scale = if model.config().num_seg_classes == 2 {
        255
    } else {
        1
    };
    let m = &prediction.mask;
    GrayImage::from_raw(
        m.width() as u32,
        m.height() as u32,
        m.data().iter().map(|&v| v.saturating_mul(scale)).collect(),
    )
    .expect("mask buffer matches its dimensions")
    .save(&mask_png)
    .map_err(|e| Error::image(&mask_png, e))?;

    let overlay_png = out_dir.join(format!("{id}_overlay.png"));
    render_overlay(image, &prediction.detections, m)
        .save(&overlay_png)
        .map_err(|e| Error::image(&overlay_png, e))?;

    Ok(InferenceArtifacts {
        detections_json,
        mask_png,
        overlay_png,
        prediction,
    })
}

pub fn infer(checkpoint: &Path, image_path: &Path, out_dir: &Path) -> Result<InferenceArtifacts> {
    let (model, _) = load_model(checkpoint)?;
    let image = read_rgb(image_path)?;
    let id = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    infer_image(&model, id, &image, out_dir)
}
