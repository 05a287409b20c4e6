use candle_core::Tensor;

use crate::encoder::{FeatureMap, NeckOutput, C3};
use crate::error::{Error, Result};
use crate::nn::{ConvBnAct, Scope};

/// Bottom-up path aggregation over the neck outputs; output shapes equal
/// the neck's.
#[derive(Debug, Clone)]
pub struct Pan {
    down3: ConvBnAct,
    merge4: C3,
    down4: ConvBnAct,
    merge5: C3,
    channels: [usize; 3],
}

impl Pan {
    pub fn new(scope: &mut Scope<'_>, channels: [usize; 3], depth: usize) -> Result<Self> {
        let [c3, c4, c5] = channels;
        Ok(Self {
            down3: ConvBnAct::new(&mut scope.sub("down3"), c3, c3, 3, 2)?,
            merge4: C3::new(&mut scope.sub("merge4"), c3 + c4, c4, depth, false)?,
            down4: ConvBnAct::new(&mut scope.sub("down4"), c4, c4, 3, 2)?,
            merge5: C3::new(&mut scope.sub("merge5"), c4 + c5, c5, depth, false)?,
            channels,
        })
    }

    pub fn forward(&self, neck: &NeckOutput, train: bool) -> Result<[FeatureMap; 3]> {
        let got = neck.levels().map(FeatureMap::channels);
        if got != self.channels {
            return Err(Error::Shape(format!(
                "PAN expects channels {:?}, got {got:?}",
                self.channels
            )));
        }
        let n3 = neck.p3.tensor().clone();
        let d3 = self.down3.forward(&n3, train)?;
        let n4 = self
            .merge4
            .forward(&Tensor::cat(&[&d3, neck.p4.tensor()], 1)?, train)?;
        let d4 = self.down4.forward(&n4, train)?;
        let n5 = self
            .merge5
            .forward(&Tensor::cat(&[&d4, neck.p5.tensor()], 1)?, train)?;
        Ok([
            FeatureMap::new(n3, 8)?,
            FeatureMap::new(n4, 16)?,
            FeatureMap::new(n5, 32)?,
        ])
    }
}
