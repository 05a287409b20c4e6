use std::collections::BTreeSet;

use crate::datamodel::BoundingBox;
use crate::decoders::Detection;
use crate::error::{Error, Result};

/// Intersection over union of two boxes, in [0, 1].
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Number of recall points in the interpolated precision average.
pub const RECALL_POINTS: usize = 101;

/// Average precision of one class, or `None` if it has no ground truth.
pub fn class_average_precision(
    dets: &[Vec<Detection>],
    gts: &[Vec<BoundingBox>],
    class_id: usize,
    iou_thresh: f64,
) -> Option<f64> {
    let num_gt: usize = gts
        .iter()
        .map(|g| g.iter().filter(|b| b.class_id == class_id).count())
        .sum();
    if num_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(usize, &Detection)> = dets
        .iter()
        .enumerate()
        .flat_map(|(i, d)| {
            d.iter()
                .filter(|d| d.class_id == class_id)
                .map(move |d| (i, d))
        })
        .collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, (img, det)) in ranked.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts[*img].iter().enumerate() {
            if g.class_id != class_id || used[*img][j] {
                continue;
            }
            let iou = box_iou(&det.bbox, g);
            if iou >= iou_thresh && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            used[*img][j] = true;
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // precision envelope: monotone non-increasing from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let sum: f64 = (0..RECALL_POINTS)
        .map(|r| {
            let r = r as f64 / (RECALL_POINTS - 1) as f64;
            let i = recall.partition_point(|&x| x < r);
            precision.get(i).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / RECALL_POINTS as f64)
}

/// Per-class AP at one IoU threshold for every class with ground truth.
pub fn per_class_average_precision(
    dets: &[Vec<Detection>],
    gts: &[Vec<BoundingBox>],
    iou_thresh: f64,
) -> Vec<(usize, f64)> {
    let classes: BTreeSet<usize> = gts.iter().flatten().map(|b| b.class_id).collect();
    classes
        .into_iter()
        .filter_map(|c| class_average_precision(dets, gts, c, iou_thresh).map(|ap| (c, ap)))
        .collect()
}

/// COCO-style AP (101-point interpolation, greedy one-to-one matching by
/// descending score), averaged over classes that have ground truth.
pub fn average_precision(
    dets: &[Vec<Detection>],
    gts: &[Vec<BoundingBox>],
    iou_thresh: f64,
) -> Result<f64> {
    if dets.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} detection lists for {} images",
            dets.len(),
            gts.len()
        )));
    }
    let per_class = per_class_average_precision(dets, gts, iou_thresh);
    if per_class.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    Ok(per_class.iter().map(|(_, ap)| ap).sum::<f64>() / per_class.len() as f64)
}

/// Mean of AP over IoU thresholds 0.50, 0.55, .., 0.95.
pub fn average_precision_range(dets: &[Vec<Detection>], gts: &[Vec<BoundingBox>]) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..10 {
        sum += average_precision(dets, gts, 0.5 + 0.05 * i as f64)?;
    }
    Ok(sum / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: BoundingBox, score: f64) -> Detection {
        Detection {
            bbox: b,
            score,
            class_id: b.class_id,
        }
    }

    #[test]
    fn iou_basics() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0, 0);
        assert_eq!(box_iou(&a, &a), 1.0);
        assert_eq!(box_iou(&a, &BoundingBox::new(5.0, 5.0, 6.0, 6.0, 0)), 0.0);
        // intersection 2, union 6
        let b = BoundingBox::new(1.0, 0.0, 3.0, 2.0, 0);
        assert!((box_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_hit_and_single_miss() {
        let g = BoundingBox::new(0.0, 0.0, 10.0, 10.0, 0);
        let hit = BoundingBox::new(0.0, 0.0, 10.0, 9.0, 0);
        let miss = BoundingBox::new(5.0, 5.0, 15.0, 15.0, 0);
        assert_eq!(
            average_precision(&[vec![det(hit, 0.9)]], &[vec![g]], 0.5).unwrap(),
            1.0
        );
        assert_eq!(
            average_precision(&[vec![det(miss, 0.9)]], &[vec![g]], 0.5).unwrap(),
            0.0
        );
        assert_eq!(average_precision(&[vec![]], &[vec![g]], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn hits_at_ranks_one_and_three() {
        // Recall/precision at cutoffs: (0.5, 1), (0.5, 1/2), (1, 2/3).
        // Envelope: r <= 0.5 -> 1, r > 0.5 -> 2/3; 51 points at 1, 50 at 2/3.
        let g1 = BoundingBox::new(0.0, 0.0, 10.0, 10.0, 0);
        let g2 = BoundingBox::new(20.0, 20.0, 30.0, 30.0, 0);
        let fp = BoundingBox::new(50.0, 50.0, 60.0, 60.0, 0);
        let dets = vec![vec![det(g1, 0.9), det(fp, 0.8), det(g2, 0.7)]];
        let ap = average_precision(&dets, &[vec![g1, g2]], 0.5).unwrap();
        assert!((ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        let d = det(BoundingBox::new(0.0, 0.0, 1.0, 1.0, 0), 0.5);
        assert!(matches!(
            average_precision(&[vec![d]], &[vec![]], 0.5),
            Err(Error::NoGroundTruth)
        ));
    }

    #[test]
    fn each_ground_truth_matches_once() {
        let g = BoundingBox::new(0.0, 0.0, 10.0, 10.0, 0);
        let dets = vec![vec![det(g, 0.9), det(g, 0.8)]];
        // second detection is a duplicate false positive ranked last
        assert_eq!(average_precision(&dets, &[vec![g]], 0.5).unwrap(), 1.0);
        let dets = vec![vec![
            det(g, 0.8),
            det(BoundingBox::new(40.0, 40.0, 50.0, 50.0, 0), 0.9),
        ]];
        assert!(average_precision(&dets, &[vec![g]], 0.5).unwrap() < 1.0);
    }
}
