use crate::datamodel::SegmentationMask;
use crate::error::{Error, Result};

fn check_dims(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Pixel-level confusion counts accumulated over any number of mask pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SegConfusion {
    num_classes: usize,
    /// `counts[gt * num_classes + pred]`
    counts: Vec<u64>,
}

impl SegConfusion {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn add(&mut self, pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
        check_dims(pred, gt)?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let (p, g) = (p as usize, g as usize);
            let bad = p.max(g);
            if bad >= self.num_classes {
                return Err(Error::ClassOutOfRange {
                    class_id: bad,
                    num_classes: self.num_classes,
                });
            }
            self.counts[g * self.num_classes + p] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let correct: u64 = (0..self.num_classes)
            .map(|c| self.counts[c * self.num_classes + c])
            .sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// IoU per class; `None` for classes absent from both prediction and ground truth.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        let k = self.num_classes;
        (0..k)
            .map(|c| {
                let tp = self.counts[c * k + c];
                let gt_total: u64 = (0..k).map(|p| self.counts[c * k + p]).sum();
                let pred_total: u64 = (0..k).map(|g| self.counts[g * k + c]).sum();
                let union = gt_total + pred_total - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn mean_iou(&self) -> Result<f64> {
        let present: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::Shape("mean IoU over an empty set of pixels".into()));
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Fraction of pixels whose labels agree.
pub fn pixel_accuracy(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let n = gt.data().len();
    let same = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(a, b)| a == b)
        .count();
    Ok(same as f64 / n.max(1) as f64)
}

/// Mean over classes present in either mask of TP / (TP + FP + FN).
pub fn mean_iou(pred: &SegmentationMask, gt: &SegmentationMask, num_classes: usize) -> Result<f64> {
    let mut c = SegConfusion::new(num_classes);
    c.add(pred, gt)?;
    c.mean_iou()
}
