use super::SegLogits;
use crate::encoder::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::{ops, Conv2d, ConvBnAct, Scope};

/// Top-down segmentation decoder from the stride-8 neck tap.
///
/// Two conv + 2x-upsample rounds produce the stride-2 feature `x_seg`; the
/// optional interaction feature is added to it; a final round returns to
/// full resolution before the per-pixel classifier.
#[derive(Debug, Clone)]
pub struct SegHead {
    round1: ConvBnAct,
    round2: ConvBnAct,
    round3: ConvBnAct,
    classifier: Conv2d,
    seg_channels: usize,
}

impl SegHead {
    pub fn new(
        scope: &mut Scope<'_>,
        in_channels: usize,
        seg_channels: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let wide = 2 * seg_channels;
        let narrow = (seg_channels / 2).max(1);
        Ok(Self {
            round1: ConvBnAct::new(&mut scope.sub("round1"), in_channels, wide, 3, 1)?,
            round2: ConvBnAct::new(&mut scope.sub("round2"), wide, seg_channels, 3, 1)?,
            round3: ConvBnAct::new(&mut scope.sub("round3"), seg_channels, narrow, 3, 1)?,
            classifier: Conv2d::new(
                &mut scope.sub("classifier"),
                narrow,
                num_classes,
                1,
                1,
                true,
            )?,
            seg_channels,
        })
    }

    pub fn seg_channels(&self) -> usize {
        self.seg_channels
    }

    /// Rounds one and two: stride 8 -> 2.
    pub fn features(&self, p2_path: &FeatureMap, train: bool) -> Result<FeatureMap> {
        if p2_path.stride() != 8 {
            return Err(Error::Shape(format!(
                "segmentation head expects a stride-8 input, got stride {}",
                p2_path.stride()
            )));
        }
        let x = ops::upsample2x(&self.round1.forward(p2_path.tensor(), train)?)?;
        let x = ops::upsample2x(&self.round2.forward(&x, train)?)?;
        FeatureMap::new(x, 2)
    }

    /// Optional fusion with the interaction feature, then the final round.
    pub fn finish(
        &self,
        x_seg: &FeatureMap,
        x_hat_seg: Option<&FeatureMap>,
        train: bool,
    ) -> Result<SegLogits> {
        let fused = match x_hat_seg {
            Some(h) => {
                if !h.same_shape(x_seg) {
                    return Err(Error::Shape(format!(
                        "x_hat_seg must match x_seg {:?} at stride 2, got {:?} at stride {}",
                        x_seg.tensor().dims(),
                        h.tensor().dims(),
                        h.stride()
                    )));
                }
                (x_seg.tensor() + h.tensor())?
            }
            None => x_seg.tensor().clone(),
        };
        let x = ops::upsample2x(&self.round3.forward(&fused, train)?)?;
        Ok(SegLogits {
            data: self.classifier.forward(&x)?,
        })
    }

    pub fn forward(
        &self,
        p2_path: &FeatureMap,
        x_hat_seg: Option<&FeatureMap>,
        train: bool,
    ) -> Result<SegLogits> {
        let x_seg = self.features(p2_path, train)?;
        self.finish(&x_seg, x_hat_seg, train)
    }
}
