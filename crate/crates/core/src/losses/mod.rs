//! Target assignment and the weighted multi-task objective.
//!
//! `l_global = beta_det * (alpha_class * l_class + alpha_obj * l_obj + alpha_box * l_box)
//!           + beta_seg * l_ce`, each component a mean before weighting.

mod assign;
mod ciou;
mod focal;
mod seg;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

pub use assign::{assign_targets, stride_for_box, Assignment, Positive, ScaleAssignment};
pub use ciou::{ciou_loss, ciou_loss_elementwise, BoxTensors};
pub use focal::{focal_loss, focal_loss_elementwise};
pub use seg::seg_ce_loss;

use crate::datamodel::{ModelConfig, SegmentationMask};
use crate::decoders::{RawPrediction, SegLogits, CENTER_RANGE};
use crate::error::{Error, Result};
use crate::nn::ops;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_class: f64,
    pub l_obj: f64,
    pub l_box: f64,
    pub l_ce: f64,
    pub l_global: f64,
}

impl LossBreakdown {
    /// Combines component values with the configured weights.
    pub fn combine(l_class: f64, l_obj: f64, l_box: f64, l_ce: f64, cfg: &ModelConfig) -> Self {
        let det = cfg.alpha_class * l_class + cfg.alpha_obj * l_obj + cfg.alpha_box * l_box;
        Self {
            l_class,
            l_obj,
            l_box,
            l_ce,
            l_global: cfg.beta_det * det + cfg.beta_seg * l_ce,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_class,
            self.l_obj,
            self.l_box,
            self.l_ce,
            self.l_global,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Differentiable total plus its scalar breakdown.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Positive-cell gathers across all scales and images.
struct Gathered {
    cls_logits: Tensor,
    cls_targets: Tensor,
    pred: BoxTensors,
    gt: BoxTensors,
}

fn gather_positives(raw: &RawPrediction, assignments: &[Assignment]) -> Result<Option<Gathered>> {
    let num_classes = raw.num_classes();
    let first = &raw.scales[0].obj_logits;
    let (dtype, dev) = (first.dtype(), first.device().clone());
    let mut cls_parts = Vec::new();
    let mut reg_parts = Vec::new();
    let mut offsets: Vec<[f64; 3]> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut gts = Vec::new();

    for (si, scale) in raw.scales.iter().enumerate() {
        let (n, _, h, w) = scale.cls_logits.dims4()?;
        let mut index = Vec::new();
        for (b, a) in assignments.iter().enumerate() {
            let sa = &a.scales[si];
            if (sa.height, sa.width, sa.stride) != (h, w, scale.stride) {
                return Err(Error::Shape(format!(
                    "assignment grid {}x{}/s{} does not match prediction {h}x{w}/s{}",
                    sa.height, sa.width, sa.stride, scale.stride
                )));
            }
            for p in &sa.positives {
                index.push((b * h * w + p.gy * w + p.gx) as u32);
                offsets.push([p.gx as f64, p.gy as f64, scale.stride as f64]);
                let mut onehot = vec![0.0; num_classes];
                onehot[p.gt.class_id] = 1.0;
                targets.extend(onehot);
                gts.push(p.gt);
            }
        }
        if index.is_empty() {
            continue;
        }
        let idx = Tensor::new(index, &dev)?;
        let cls = scale
            .cls_logits
            .permute((0, 2, 3, 1))?
            .reshape((n * h * w, num_classes))?;
        let reg = scale
            .box_reg
            .permute((0, 2, 3, 1))?
            .reshape((n * h * w, 4))?;
        cls_parts.push(cls.index_select(&idx, 0)?);
        reg_parts.push(reg.index_select(&idx, 0)?);
    }
    if gts.is_empty() {
        return Ok(None);
    }
    let p = gts.len();
    let cls_logits = Tensor::cat(&cls_parts, 0)?;
    let reg = Tensor::cat(&reg_parts, 0)?;
    let cls_targets = Tensor::from_vec(targets, (p, num_classes), &dev)?.to_dtype(dtype)?;
    let col = |j: usize| -> Result<Tensor> {
        let v: Vec<f64> = offsets.iter().map(|o| o[j]).collect();
        Ok(Tensor::new(v, &dev)?.to_dtype(dtype)?)
    };
    let (gx, gy, stride) = (col(0)?, col(1)?, col(2)?);
    let t = |j: usize| -> Result<Tensor> { Ok(reg.narrow(1, j, 1)?.squeeze(1)?) };
    // differentiable form of `decoders::center_offset`
    let offset = |t: Tensor| -> Result<Tensor> {
        Ok(((ops::sigmoid(&t)? * (2.0 * CENTER_RANGE))? - (CENTER_RANGE - 0.5))?)
    };
    let cx = ((offset(t(0)?)? + gx)? * &stride)?;
    let cy = ((offset(t(1)?)? + gy)? * &stride)?;
    let half_w = ((t(2)?.exp()? * &stride)? * 0.5)?;
    let half_h = ((t(3)?.exp()? * &stride)? * 0.5)?;
    let pred = BoxTensors {
        x1: (&cx - &half_w)?,
        x2: (&cx + &half_w)?,
        y1: (&cy - &half_h)?,
        y2: (&cy + &half_h)?,
    };
    let gt = BoxTensors::from_boxes(&gts, dtype, &dev)?;
    Ok(Some(Gathered {
        cls_logits,
        cls_targets,
        pred,
        gt,
    }))
}

/// The full training objective for a batch.
///
/// Without positive cells, `l_class` and `l_box` are 0; objectness and
/// segmentation terms are always computed.
pub fn global_loss(
    raw: &RawPrediction,
    seg: &SegLogits,
    assignments: &[Assignment],
    masks: &[SegmentationMask],
    cfg: &ModelConfig,
) -> Result<LossOutput> {
    if assignments.len() != raw.batch() {
        return Err(Error::Shape(format!(
            "{} assignments for a batch of {}",
            assignments.len(),
            raw.batch()
        )));
    }
    let first = &raw.scales[0].obj_logits;
    let (dtype, dev) = (first.dtype(), first.device().clone());

    let mut obj_logits = Vec::new();
    let mut obj_targets = Vec::new();
    for (si, scale) in raw.scales.iter().enumerate() {
        obj_logits.push(scale.obj_logits.flatten_all()?);
        for a in assignments {
            obj_targets.extend(a.scales[si].objectness_target());
        }
    }
    let obj_logits = Tensor::cat(&obj_logits, 0)?;
    let obj_targets = Tensor::new(obj_targets, &dev)?.to_dtype(dtype)?;
    let l_obj = focal_loss(&obj_logits, &obj_targets, cfg.focal_alpha, cfg.focal_gamma)?;

    let zero = Tensor::zeros((), dtype, &dev)?;
    let (l_class, l_box) = match gather_positives(raw, assignments)? {
        Some(g) => (
            focal_loss(
                &g.cls_logits,
                &g.cls_targets,
                cfg.focal_alpha,
                cfg.focal_gamma,
            )?,
            ciou_loss_elementwise(&g.pred, &g.gt)?.mean_all()?,
        ),
        None => (zero.clone(), zero),
    };
    let l_ce = seg_ce_loss(seg, masks)?;

    let det =
        (((&l_class * cfg.alpha_class)? + (&l_obj * cfg.alpha_obj)?)? + (&l_box * cfg.alpha_box)?)?;
    let total = ((det * cfg.beta_det)? + (&l_ce * cfg.beta_seg)?)?;
    let breakdown = LossBreakdown {
        l_class: scalar(&l_class)?,
        l_obj: scalar(&l_obj)?,
        l_box: scalar(&l_box)?,
        l_ce: scalar(&l_ce)?,
        l_global: scalar(&total)?,
    };
    Ok(LossOutput { total, breakdown })
}
