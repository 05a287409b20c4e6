use candle_core::Tensor;

use super::{FeatureMap, NeckOutput, C3};
use crate::error::{Error, Result};
use crate::nn::{ops, ConvBnAct, Scope};

/// Top-down pathway: each coarser level is reduced by a lateral 1x1,
/// upsampled 2x and merged with the next finer backbone level.
#[derive(Debug, Clone)]
pub struct Fpn {
    lateral5: ConvBnAct,
    merge4: C3,
    lateral4: ConvBnAct,
    merge3: C3,
    channels: [usize; 3],
}

impl Fpn {
    pub fn new(scope: &mut Scope<'_>, channels: [usize; 3], depth: usize) -> Result<Self> {
        let [c3, c4, c5] = channels;
        if channels.iter().any(|c| *c == 0 || c % 2 != 0) {
            return Err(Error::Config(format!(
                "FPN channels {channels:?} must be positive and even"
            )));
        }
        Ok(Self {
            lateral5: ConvBnAct::new(&mut scope.sub("lateral5"), c5, c4, 1, 1)?,
            merge4: C3::new(&mut scope.sub("merge4"), 2 * c4, c4, depth, false)?,
            lateral4: ConvBnAct::new(&mut scope.sub("lateral4"), c4, c3, 1, 1)?,
            merge3: C3::new(&mut scope.sub("merge3"), 2 * c3, c3, depth, false)?,
            channels,
        })
    }

    pub fn forward(
        &self,
        c3: &FeatureMap,
        c4: &FeatureMap,
        c5: &FeatureMap,
        train: bool,
    ) -> Result<NeckOutput> {
        let got = [c3.channels(), c4.channels(), c5.channels()];
        if got != self.channels || [c3.stride(), c4.stride(), c5.stride()] != [8, 16, 32] {
            return Err(Error::Shape(format!(
                "FPN expects channels {:?} at strides (8, 16, 32), got {got:?}",
                self.channels
            )));
        }
        let top = ops::upsample2x(&self.lateral5.forward(c5.tensor(), train)?)?;
        let p4 = self
            .merge4
            .forward(&Tensor::cat(&[&top, c4.tensor()], 1)?, train)?;
        let mid = ops::upsample2x(&self.lateral4.forward(&p4, train)?)?;
        let p3 = self
            .merge3
            .forward(&Tensor::cat(&[&mid, c3.tensor()], 1)?, train)?;
        let p3 = FeatureMap::new(p3, 8)?;
        Ok(NeckOutput {
            p2_path: p3.clone(),
            p3,
            p4: FeatureMap::new(p4, 16)?,
            p5: c5.clone(),
        })
    }
}
