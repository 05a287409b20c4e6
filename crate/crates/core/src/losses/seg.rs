use candle_core::{DType, Tensor};

use crate::datamodel::SegmentationMask;
use crate::decoders::SegLogits;
use crate::error::{Error, Result};
use crate::nn::ops;

fn targets_tensor(
    masks: &[SegmentationMask],
    num_classes: usize,
    dims: (usize, usize, usize),
) -> Result<Vec<u32>> {
    let (n, h, w) = dims;
    if masks.len() != n {
        return Err(Error::Shape(format!(
            "{} masks for a batch of {n}",
            masks.len()
        )));
    }
    let mut out = Vec::with_capacity(n * h * w);
    for m in masks {
        if m.width() != w || m.height() != h {
            return Err(Error::Shape(format!(
                "mask {}x{} does not match logits {w}x{h}",
                m.width(),
                m.height()
            )));
        }
        for &v in m.data() {
            if v as usize >= num_classes {
                return Err(Error::ClassOutOfRange {
                    class_id: v as usize,
                    num_classes,
                });
            }
            out.push(v as u32);
        }
    }
    Ok(out)
}

/// Mean per-pixel cross-entropy with logits.
///
/// With two classes this is the binary form on the logit difference
/// `d = l1 - l0`: `softplus(d) - t d`. Otherwise softmax cross-entropy.
pub fn seg_ce_loss(logits: &SegLogits, masks: &[SegmentationMask]) -> Result<Tensor> {
    let x = &logits.data;
    let (n, k, h, w) = x.dims4()?;
    let labels = targets_tensor(masks, k, (n, h, w))?;
    let dev = x.device();
    if k == 2 {
        let t: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
        let t = Tensor::from_vec(t, (n, 1, h, w), dev)?.to_dtype(x.dtype())?;
        let d = (x.narrow(1, 1, 1)? - x.narrow(1, 0, 1)?)?;
        let loss = (ops::softplus(&d)? - (d * t)?)?;
        return Ok(loss.mean_all()?);
    }
    let max = x.max_keepdim(1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(1)?.log()?;
    let log_p = shifted.broadcast_sub(&lse)?;
    let labels = Tensor::from_vec(labels, (n, 1, h, w), dev)?;
    let picked = log_p.gather(&labels.to_dtype(DType::U32)?, 1)?;
    Ok(picked.neg()?.mean_all()?)
}
