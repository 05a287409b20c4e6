use candle_core::{DType, Tensor};

use super::{Detection, RawPrediction};
use crate::datamodel::BoundingBox;
use crate::error::Result;
use crate::metrics::box_iou;

/// Candidates kept per image before NMS.
const PRE_NMS_TOP_K: usize = 3000;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

/// Largest center offset, in cells, a cell can predict from its own center.
/// Covers every positive cell of the target assigner (2.5 strides away at most).
pub const CENTER_RANGE: f64 = 3.0;

/// Center offset from the cell center, in cells: `CENTER_RANGE * (2 sigmoid(t) - 1)`.
pub fn center_offset(t: f64) -> f64 {
    CENTER_RANGE * (2.0 * sigmoid(t) - 1.0)
}

/// Anchor-free decode of one cell:
/// center = (cell + 0.5 + center_offset(t_xy)) * s, size = exp(t_wh) * s.
pub fn decode_cell(
    t: [f64; 4],
    gx: usize,
    gy: usize,
    stride: usize,
    class_id: usize,
) -> BoundingBox {
    let s = stride as f64;
    let cx = (gx as f64 + 0.5 + center_offset(t[0])) * s;
    let cy = (gy as f64 + 0.5 + center_offset(t[1])) * s;
    BoundingBox::from_center(cx, cy, t[2].exp() * s, t[3].exp() * s, class_id)
}

/// Inverse of [`decode_cell`]; `None` when the box center is `CENTER_RANGE`
/// or more cells from the center of cell `(gx, gy)`.
pub fn encode_box(b: &BoundingBox, gx: usize, gy: usize, stride: usize) -> Option<[f64; 4]> {
    let s = stride as f64;
    let (cx, cy) = b.center();
    let ox = cx / s - gx as f64 - 0.5;
    let oy = cy / s - gy as f64 - 0.5;
    let reachable = |o: f64| o.abs() < CENTER_RANGE;
    if !reachable(ox) || !reachable(oy) || b.width() <= 0.0 || b.height() <= 0.0 {
        return None;
    }
    let inverse = |o: f64| {
        let f = 0.5 * (o / CENTER_RANGE + 1.0);
        (f / (1.0 - f)).ln()
    };
    Some([
        inverse(ox),
        inverse(oy),
        (b.width() / s).ln(),
        (b.height() / s).ln(),
    ])
}

/// Decodes every image of the batch.
pub fn decode_detections(
    raw: &RawPrediction,
    conf_thresh: f64,
    nms_iou: f64,
    image_size: (usize, usize),
    max_detections: usize,
) -> Result<Vec<Vec<Detection>>> {
    (0..raw.batch())
        .map(|i| decode_image(raw, i, conf_thresh, nms_iou, image_size, max_detections))
        .collect()
}

/// Decodes batch entry `index`: score filter, class-wise NMS, clamp to `(width, height)`.
pub fn decode_image(
    raw: &RawPrediction,
    index: usize,
    conf_thresh: f64,
    nms_iou: f64,
    image_size: (usize, usize),
    max_detections: usize,
) -> Result<Vec<Detection>> {
    let (img_w, img_h) = (image_size.0 as f64, image_size.1 as f64);
    let mut candidates = Vec::new();
    for scale in &raw.scales {
        let (h, w) = scale.grid()?;
        let cells = h * w;
        let obj = to_vec(&scale.obj_logits.get(index)?)?;
        let cls = to_vec(&scale.cls_logits.get(index)?)?;
        let reg = to_vec(&scale.box_reg.get(index)?)?;
        let num_classes = cls.len() / cells;
        for k in 0..cells {
            let (best, best_logit) = (0..num_classes).map(|c| (c, cls[c * cells + k])).fold(
                (0, f64::NEG_INFINITY),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            );
            let score = sigmoid(obj[k]) * sigmoid(best_logit);
            if !(score > 0.0 && score >= conf_thresh) {
                continue;
            }
            let t = [
                reg[k],
                reg[cells + k],
                reg[2 * cells + k],
                reg[3 * cells + k],
            ];
            let bbox = decode_cell(t, k % w, k / w, scale.stride, best).clamped(img_w, img_h);
            if bbox.is_valid() {
                candidates.push(Detection {
                    bbox,
                    score,
                    class_id: best,
                });
            }
        }
    }
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    candidates.truncate(PRE_NMS_TOP_K);
    let mut kept = nms(candidates, nms_iou);
    kept.truncate(max_detections);
    Ok(kept)
}

/// Class-wise greedy NMS. Output is sorted by descending score.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && box_iou(&k.bbox, &d.bbox) >= iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}
