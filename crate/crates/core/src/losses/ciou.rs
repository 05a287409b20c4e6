use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};
use log::warn;

use crate::datamodel::BoundingBox;
use crate::error::Result;
use crate::nn::ops;

const EPS: f64 = 1e-9;

/// Box coordinates as four `(P,)` tensors.
#[derive(Debug, Clone)]
pub struct BoxTensors {
    pub x1: Tensor,
    pub y1: Tensor,
    pub x2: Tensor,
    pub y2: Tensor,
}

impl BoxTensors {
    pub fn from_boxes(boxes: &[BoundingBox], dtype: DType, device: &Device) -> Result<Self> {
        let col = |f: fn(&BoundingBox) -> f64| -> Result<Tensor> {
            let v: Vec<f64> = boxes.iter().map(f).collect();
            Ok(Tensor::new(v, device)?.to_dtype(dtype)?)
        };
        Ok(Self {
            x1: col(|b| b.x_min)?,
            y1: col(|b| b.y_min)?,
            x2: col(|b| b.x_max)?,
            y2: col(|b| b.y_max)?,
        })
    }

    fn wh(&self) -> Result<(Tensor, Tensor)> {
        Ok(((&self.x2 - &self.x1)?, (&self.y2 - &self.y1)?))
    }
}

/// Per-pair `1 - CIoU`.
pub fn ciou_loss_elementwise(pred: &BoxTensors, gt: &BoxTensors) -> Result<Tensor> {
    let (pw, ph) = pred.wh()?;
    let (gw, gh) = gt.wh()?;

    let iw = (pred.x2.minimum(&gt.x2)? - pred.x1.maximum(&gt.x1)?)?.relu()?;
    let ih = (pred.y2.minimum(&gt.y2)? - pred.y1.maximum(&gt.y1)?)?.relu()?;
    let inter = (iw * ih)?;
    let union = ((((&pw * &ph)? + (&gw * &gh)?)? - &inter)? + EPS)?;
    let iou = (&inter / union)?;

    let cw = (pred.x2.maximum(&gt.x2)? - pred.x1.minimum(&gt.x1)?)?;
    let ch = (pred.y2.maximum(&gt.y2)? - pred.y1.minimum(&gt.y1)?)?;
    let c2 = ((cw.sqr()? + ch.sqr()?)? + EPS)?;
    let dx = (((&pred.x1 + &pred.x2)? - (&gt.x1 + &gt.x2)?)? * 0.5)?;
    let dy = (((&pred.y1 + &pred.y2)? - (&gt.y1 + &gt.y2)?)? * 0.5)?;
    let rho2 = (dx.sqr()? + dy.sqr()?)?;

    let angle = (ops::atan(&(&gw / &gh)?)? - ops::atan(&(&pw / &ph)?)?)?;
    let v = (angle.sqr()? * (4.0 / (PI * PI)))?;
    let alpha = (&v / ((iou.affine(-1.0, 1.0)? + &v)? + EPS)?)?;

    let ciou = ((&iou - (rho2 / c2)?)? - (alpha * v)?)?;
    Ok(ciou.affine(-1.0, 1.0)?)
}

/// Mean `1 - CIoU` over paired boxes. Pairs whose ground truth has zero
/// width or height are skipped with a warning; an empty set gives 0.
pub fn ciou_loss(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<f64> {
    assert_eq!(pred.len(), gt.len(), "ciou_loss needs paired boxes");
    let (p, g): (Vec<BoundingBox>, Vec<BoundingBox>) = pred
        .iter()
        .zip(gt)
        .filter(|(_, g)| {
            let ok = g.width() > 0.0 && g.height() > 0.0;
            if !ok {
                warn!("excluding degenerate ground-truth box {g:?} from CIoU");
            }
            ok
        })
        .map(|(p, g)| (*p, *g))
        .unzip();
    if p.is_empty() {
        return Ok(0.0);
    }
    let dev = Device::Cpu;
    let pt = BoxTensors::from_boxes(&p, DType::F64, &dev)?;
    let gtt = BoxTensors::from_boxes(&g, DType::F64, &dev)?;
    Ok(ciou_loss_elementwise(&pt, &gtt)?
        .mean_all()?
        .to_scalar::<f64>()?)
}
