//! Task decoders: PAN + detection heads, the segmentation head, and box decoding.

mod decode;
mod head;
mod pan;
mod seg;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use decode::{
    center_offset, decode_cell, decode_detections, decode_image, encode_box, nms, CENTER_RANGE,
};
pub use head::{CoupledHead, DecoupledHead, DetectionHead};
pub use pan::Pan;
pub use seg::SegHead;

use crate::datamodel::{BoundingBox, SegmentationMask};
use crate::encoder::FeatureMap;
use crate::error::{Error, Result};

/// Head outputs for one scale, all NCHW.
#[derive(Debug, Clone)]
pub struct ScalePrediction {
    pub stride: usize,
    /// N x C x h x w
    pub cls_logits: Tensor,
    /// N x 1 x h x w
    pub obj_logits: Tensor,
    /// N x 4 x h x w, channels (tx, ty, tw, th)
    pub box_reg: Tensor,
}

impl ScalePrediction {
    pub fn grid(&self) -> Result<(usize, usize)> {
        let (_, _, h, w) = self.obj_logits.dims4()?;
        Ok((h, w))
    }
}

/// Raw detection logits for the three scales, finest first.
#[derive(Debug, Clone)]
pub struct RawPrediction {
    pub scales: Vec<ScalePrediction>,
}

impl RawPrediction {
    pub fn batch(&self) -> usize {
        self.scales.first().map_or(0, |s| s.obj_logits.dims()[0])
    }

    pub fn num_classes(&self) -> usize {
        self.scales.first().map_or(0, |s| s.cls_logits.dims()[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    /// objectness probability times class probability
    pub score: f64,
    pub class_id: usize,
}

/// Full-resolution segmentation logits, N x K x H x W.
#[derive(Debug, Clone)]
pub struct SegLogits {
    pub data: Tensor,
}

impl SegLogits {
    pub fn num_classes(&self) -> usize {
        self.data.dims()[1]
    }

    /// Per-image argmax class maps.
    pub fn predict_masks(&self) -> Result<Vec<SegmentationMask>> {
        let (n, _, h, w) = self.data.dims4()?;
        let labels = self.data.argmax(1)?.to_dtype(candle_core::DType::U32)?;
        (0..n)
            .map(|i| {
                let v: Vec<u8> = labels
                    .get(i)?
                    .flatten_all()?
                    .to_vec1::<u32>()?
                    .into_iter()
                    .map(|c| c as u8)
                    .collect();
                SegmentationMask::new(w, h, v)
            })
            .collect()
    }
}

/// Additive fusion of a decoder feature with its interaction-module counterpart.
/// `None` (interaction disabled) returns `x` untouched.
pub fn fuse_features(x: &FeatureMap, x_hat: Option<&FeatureMap>) -> Result<FeatureMap> {
    match x_hat {
        None => Ok(x.clone()),
        Some(h) => {
            if !x.same_shape(h) {
                return Err(Error::Shape(format!(
                    "cannot fuse {:?}/s{} with {:?}/s{}",
                    x.tensor().dims(),
                    x.stride(),
                    h.tensor().dims(),
                    h.stride()
                )));
            }
            x.map(|t| Ok((t + h.tensor())?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn fm(v: f64) -> FeatureMap {
        let t = Tensor::arange(0f64, 24.0, &Device::Cpu)
            .unwrap()
            .reshape((1, 2, 3, 4))
            .unwrap();
        FeatureMap::new((t * v).unwrap(), 8).unwrap()
    }

    #[test]
    fn fusion_is_additive() {
        let x = fm(1.0);
        let zero = FeatureMap::new(x.tensor().zeros_like().unwrap(), 8).unwrap();
        let same = fuse_features(&x, Some(&zero)).unwrap();
        assert_eq!(
            same.tensor()
                .flatten_all()
                .unwrap()
                .to_vec1::<f64>()
                .unwrap(),
            x.tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
        let doubled = fuse_features(&x, Some(&x)).unwrap();
        let expect = (x.tensor() * 2.0).unwrap();
        assert_eq!(
            doubled
                .tensor()
                .flatten_all()
                .unwrap()
                .to_vec1::<f64>()
                .unwrap(),
            expect.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
        let passthrough = fuse_features(&x, None).unwrap();
        let bits = |t: &Tensor| -> Vec<u64> {
            t.flatten_all()
                .unwrap()
                .to_vec1::<f64>()
                .unwrap()
                .into_iter()
                .map(f64::to_bits)
                .collect()
        };
        assert_eq!(bits(passthrough.tensor()), bits(x.tensor()));
    }

    #[test]
    fn fusion_rejects_shape_mismatch() {
        let x = fm(1.0);
        let y = FeatureMap::new(
            Tensor::zeros((1, 2, 3, 3), DType::F64, &Device::Cpu).unwrap(),
            8,
        )
        .unwrap();
        assert!(fuse_features(&x, Some(&y)).is_err());
    }
}
