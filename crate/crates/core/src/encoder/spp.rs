use candle_core::Tensor;

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::{ops, ConvBnAct, Scope};

/// Spatial pyramid pooling: parallel same-padded max pools concatenated
/// with their input, projected back to the input width.
#[derive(Debug, Clone)]
pub struct Spp {
    reduce: ConvBnAct,
    project: ConvBnAct,
    kernels: Vec<usize>,
    channels: usize,
}

impl Spp {
    pub fn new(scope: &mut Scope<'_>, channels: usize, kernels: &[usize]) -> Result<Self> {
        let hidden = channels / 2;
        Ok(Self {
            reduce: ConvBnAct::new(&mut scope.sub("cv1"), channels, hidden, 1, 1)?,
            project: ConvBnAct::new(
                &mut scope.sub("cv2"),
                hidden * (kernels.len() + 1),
                channels,
                1,
                1,
            )?,
            kernels: kernels.to_vec(),
            channels,
        })
    }

    /// `[x, pool_k1(x), pool_k2(x), ..]` of the reduced input, before projection.
    pub fn pool_stage(&self, c5: &FeatureMap, train: bool) -> Result<Tensor> {
        if c5.channels() != self.channels {
            return Err(Error::Shape(format!(
                "SPP expects {} channels, got {}",
                self.channels,
                c5.channels()
            )));
        }
        let x = self.reduce.forward(c5.tensor(), train)?;
        let mut parts = vec![x.clone()];
        for &k in &self.kernels {
            parts.push(ops::max_pool_same(&x, k)?);
        }
        Ok(Tensor::cat(&parts, 1)?)
    }

    pub fn forward(&self, c5: &FeatureMap, train: bool) -> Result<FeatureMap> {
        let pooled = self.pool_stage(c5, train)?;
        FeatureMap::new(self.project.forward(&pooled, train)?, c5.stride())
    }
}
