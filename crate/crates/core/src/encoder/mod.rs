//! Shared encoder: CSP backbone, spatial pyramid pooling and the top-down FPN.

mod backbone;
mod fpn;
mod spp;

use candle_core::Tensor;

pub use backbone::{Backbone, Bottleneck, C3};
pub use fpn::Fpn;
pub use spp::Spp;

use crate::datamodel::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::Scope;

/// A strided NCHW feature tensor.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    data: Tensor,
    stride: usize,
}

impl FeatureMap {
    pub fn new(data: Tensor, stride: usize) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::Shape(format!(
                "feature map must be NCHW, got {:?}",
                data.dims()
            )));
        }
        Ok(Self { data, stride })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn batch(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn height(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[3]
    }

    /// `(height, width, channels)` in the image-major order used in shape contracts.
    pub fn hwc(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), self.channels())
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.data.dims() == other.data.dims() && self.stride == other.stride
    }

    pub fn map(&self, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Self> {
        FeatureMap::new(f(&self.data)?, self.stride)
    }
}

/// Three neck features at strides 8/16/32 plus the segmentation tap.
#[derive(Debug, Clone)]
pub struct NeckOutput {
    pub p3: FeatureMap,
    pub p4: FeatureMap,
    pub p5: FeatureMap,
    /// Stride-8 output of the FPN, the input of the segmentation head.
    pub p2_path: FeatureMap,
}

impl NeckOutput {
    pub fn levels(&self) -> [&FeatureMap; 3] {
        [&self.p3, &self.p4, &self.p5]
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    backbone: Backbone,
    spp: Spp,
    fpn: Fpn,
}

impl Encoder {
    pub fn new(scope: &mut Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        let ch = cfg.scaled_channels();
        let backbone = Backbone::new(&mut scope.sub("backbone"), cfg)?;
        let spp = Spp::new(&mut scope.sub("spp"), ch[2], &[5, 9, 13])?;
        let fpn = Fpn::new(&mut scope.sub("fpn"), ch, cfg.scaled_depth(3))?;
        Ok(Self { backbone, spp, fpn })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn spp(&self) -> &Spp {
        &self.spp
    }

    pub fn fpn(&self) -> &Fpn {
        &self.fpn
    }

    pub fn forward(&self, image: &Tensor, train: bool) -> Result<NeckOutput> {
        let (c3, c4, c5) = self.backbone.forward(image, train)?;
        let c5 = self.spp.forward(&c5, train)?;
        self.fpn.forward(&c3, &c4, &c5, train)
    }
}
