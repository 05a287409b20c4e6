use std::path::Path;
use std::str::FromStr;

use crate::datamodel::{split_dataset, BoundingBox, Dataset, ImageSample, SegmentationMask};
use crate::decoders::{decode_detections, Detection};
use crate::error::{Error, Result};
use crate::metrics::{
    average_precision, average_precision_range, per_class_average_precision, EvalReport,
    SegConfusion,
};
use crate::model::YoloMed;

use super::checkpoint::load_model;
use super::letterbox::{images_to_tensor, letterbox_sample, Letterbox};
use super::load_data_root;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

/// Detections and mask of one image, in original image coordinates.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub detections: Vec<Detection>,
    pub mask: SegmentationMask,
}

/// Eval-mode prediction for a list of samples at the given score threshold.
pub fn predict_samples(
    model: &YoloMed,
    samples: &[ImageSample],
    conf_thresh: f64,
) -> Result<Vec<Prediction>> {
    let cfg = model.config();
    let size = cfg.input_size;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let boxed: Vec<(ImageSample, Letterbox)> =
            chunk.iter().map(|s| letterbox_sample(s, size)).collect();
        let images: Vec<_> = boxed.iter().map(|(s, _)| &s.image).collect();
        let x = images_to_tensor(&images, model.dtype())?;
        let o = model.forward(&x, false)?;
        let dets = decode_detections(
            &o.raw,
            conf_thresh,
            cfg.nms_iou,
            (size, size),
            cfg.max_detections,
        )?;
        let masks = o.seg.predict_masks()?;
        for ((d, m), (_, lb)) in dets.into_iter().zip(masks).zip(&boxed) {
            out.push(Prediction {
                detections: d
                    .into_iter()
                    .map(|det| Detection {
                        bbox: lb.inverse_box(&det.bbox),
                        ..det
                    })
                    .filter(|det| det.bbox.is_valid())
                    .collect(),
                mask: lb.inverse_mask(&m),
            });
        }
    }
    Ok(out)
}

/// Metrics of given predictions against ground truth; latency is left empty.
pub fn evaluate_predictions(
    detections: &[Vec<Detection>],
    gt_boxes: &[Vec<BoundingBox>],
    pred_masks: &[SegmentationMask],
    gt_masks: &[SegmentationMask],
    num_seg_classes: usize,
) -> Result<EvalReport> {
    if pred_masks.len() != gt_masks.len() {
        return Err(Error::Shape(format!(
            "{} predicted masks for {} ground-truth masks",
            pred_masks.len(),
            gt_masks.len()
        )));
    }
    let mut confusion = SegConfusion::new(num_seg_classes);
    for (p, g) in pred_masks.iter().zip(gt_masks) {
        confusion.add(p, g)?;
    }
    Ok(EvalReport {
        ap50: average_precision(detections, gt_boxes, 0.5)?,
        ap95: average_precision(detections, gt_boxes, 0.95)?,
        ap50_95: average_precision_range(detections, gt_boxes)?,
        pa: confusion.pixel_accuracy(),
        mean_iou: confusion.mean_iou()?,
        per_class_ap50: per_class_average_precision(detections, gt_boxes, 0.5),
        per_class_iou: confusion.class_iou(),
        num_images: gt_masks.len(),
        latency: None,
    })
}

/// Decodes at the evaluation threshold and scores every metric on `ds`.
pub fn evaluate_dataset(model: &YoloMed, ds: &Dataset) -> Result<EvalReport> {
    let preds = predict_samples(model, ds.samples(), model.config().eval_conf_thresh)?;
    let dets: Vec<Vec<Detection>> = preds.iter().map(|p| p.detections.clone()).collect();
    let masks: Vec<SegmentationMask> = preds.into_iter().map(|p| p.mask).collect();
    let gt_boxes: Vec<Vec<BoundingBox>> = ds.samples().iter().map(|s| s.boxes.clone()).collect();
    let gt_masks: Vec<SegmentationMask> = ds.samples().iter().map(|s| s.mask.clone()).collect();
    evaluate_predictions(
        &dets,
        &gt_boxes,
        &masks,
        &gt_masks,
        model.config().num_seg_classes,
    )
}

/// Loads a checkpoint and evaluates it on one split of the dataset at
/// `data_root`, reproducing the split the training run used.
pub fn evaluate(checkpoint: &Path, data_root: &Path, split: Split) -> Result<EvalReport> {
    let (model, _) = load_model(checkpoint)?;
    let cfg = model.config();
    let ds = load_data_root(data_root, cfg)?;
    let (train, val, test) = split_dataset(&ds, cfg.split_ratios, cfg.seed)?;
    let part = match split {
        Split::Train => train,
        Split::Val => val,
        Split::Test => test,
    };
    evaluate_dataset(&model, &part)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: f64) -> BoundingBox {
        BoundingBox::new(x, x, x + 10.0, x + 10.0, 0)
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let gts = vec![vec![square(0.0)], vec![square(5.0), square(30.0)]];
        let dets: Vec<Vec<Detection>> = gts
            .iter()
            .map(|bs| {
                bs.iter()
                    .map(|b| Detection {
                        bbox: *b,
                        score: 0.9,
                        class_id: 0,
                    })
                    .collect()
            })
            .collect();
        let m = SegmentationMask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let r =
            evaluate_predictions(&dets, &gts, &[m.clone(), m.clone()], &[m.clone(), m], 2).unwrap();
        assert_eq!((r.ap50, r.pa, r.mean_iou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_detections_give_zero_ap() {
        let gts = vec![vec![square(0.0)]];
        let m = SegmentationMask::zeros(2, 2);
        let r = evaluate_predictions(
            &[vec![]],
            &gts,
            std::slice::from_ref(&m),
            std::slice::from_ref(&m),
            2,
        )
        .unwrap();
        assert_eq!(r.ap50, 0.0);
    }

    #[test]
    fn split_names_parse() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("holdout".parse::<Split>().is_err());
    }
}
