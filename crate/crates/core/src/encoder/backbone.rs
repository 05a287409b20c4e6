use candle_core::Tensor;

use super::FeatureMap;
use crate::datamodel::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{ConvBnAct, Scope};

/// 1x1 reduce then 3x3, with an optional identity shortcut.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    cv1: ConvBnAct,
    cv2: ConvBnAct,
    shortcut: bool,
}

impl Bottleneck {
    pub fn new(scope: &mut Scope<'_>, channels: usize, shortcut: bool) -> Result<Self> {
        Ok(Self {
            cv1: ConvBnAct::new(&mut scope.sub("cv1"), channels, channels, 1, 1)?,
            cv2: ConvBnAct::new(&mut scope.sub("cv2"), channels, channels, 3, 1)?,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.cv2.forward(&self.cv1.forward(x, train)?, train)?;
        if self.shortcut {
            Ok((y + x)?)
        } else {
            Ok(y)
        }
    }
}

/// Cross-stage partial block: the input is split into a transformed path
/// (1x1 then a stack of bottlenecks) and a bypass path (1x1), which are
/// concatenated and merged by a final 1x1.
#[derive(Debug, Clone)]
pub struct C3 {
    cv1: ConvBnAct,
    cv2: ConvBnAct,
    cv3: ConvBnAct,
    blocks: Vec<Bottleneck>,
    in_channels: usize,
}

impl C3 {
    pub fn new(
        scope: &mut Scope<'_>,
        in_channels: usize,
        out_channels: usize,
        depth: usize,
        shortcut: bool,
    ) -> Result<Self> {
        if !out_channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "CSP block output width {out_channels} must be even"
            )));
        }
        let hidden = out_channels / 2;
        let cv1 = ConvBnAct::new(&mut scope.sub("cv1"), in_channels, hidden, 1, 1)?;
        let cv2 = ConvBnAct::new(&mut scope.sub("cv2"), in_channels, hidden, 1, 1)?;
        let cv3 = ConvBnAct::new(&mut scope.sub("cv3"), 2 * hidden, out_channels, 1, 1)?;
        let mut m = scope.sub("m");
        let blocks = (0..depth)
            .map(|i| Bottleneck::new(&mut m.sub(&i.to_string()), hidden, shortcut))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cv1,
            cv2,
            cv3,
            blocks,
            in_channels,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "CSP block expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let mut a = self.cv1.forward(x, train)?;
        for b in &self.blocks {
            a = b.forward(&a, train)?;
        }
        let b = self.cv2.forward(x, train)?;
        self.cv3.forward(&Tensor::cat(&[&a, &b], 1)?, train)
    }
}

/// CSPDarknet-style trunk producing strides 8, 16 and 32.
#[derive(Debug, Clone)]
pub struct Backbone {
    stem: ConvBnAct,
    down1: ConvBnAct,
    stage1: C3,
    down2: ConvBnAct,
    stage2: C3,
    down3: ConvBnAct,
    stage3: C3,
    down4: ConvBnAct,
    stage4: C3,
}

impl Backbone {
    pub fn new(scope: &mut Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        let [c3, c4, c5] = cfg.scaled_channels();
        let c1 = (c3 / 4).max(4);
        let c2 = (c3 / 2).max(4) & !1;
        let d = |n| cfg.scaled_depth(n);
        Ok(Self {
            stem: ConvBnAct::new(&mut scope.sub("stem"), 3, c1, 3, 2)?,
            down1: ConvBnAct::new(&mut scope.sub("down1"), c1, c2, 3, 2)?,
            stage1: C3::new(&mut scope.sub("stage1"), c2, c2, d(3), true)?,
            down2: ConvBnAct::new(&mut scope.sub("down2"), c2, c3, 3, 2)?,
            stage2: C3::new(&mut scope.sub("stage2"), c3, c3, d(6), true)?,
            down3: ConvBnAct::new(&mut scope.sub("down3"), c3, c4, 3, 2)?,
            stage3: C3::new(&mut scope.sub("stage3"), c4, c4, d(9), true)?,
            down4: ConvBnAct::new(&mut scope.sub("down4"), c4, c5, 3, 2)?,
            stage4: C3::new(&mut scope.sub("stage4"), c5, c5, d(3), true)?,
        })
    }

    /// `image` is NCHW in [0, 1] with H and W divisible by 32.
    pub fn forward(
        &self,
        image: &Tensor,
        train: bool,
    ) -> Result<(FeatureMap, FeatureMap, FeatureMap)> {
        let (_, c, h, w) = image.dims4()?;
        if c != 3 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "backbone input must be Nx3xHxW with H, W divisible by 32, got {:?}",
                image.dims()
            )));
        }
        debug_assert!(all_finite(image), "non-finite value in backbone input");
        let x = self.stem.forward(image, train)?;
        let x = self
            .stage1
            .forward(&self.down1.forward(&x, train)?, train)?;
        let c3 = self
            .stage2
            .forward(&self.down2.forward(&x, train)?, train)?;
        let c4 = self
            .stage3
            .forward(&self.down3.forward(&c3, train)?, train)?;
        let c5 = self
            .stage4
            .forward(&self.down4.forward(&c4, train)?, train)?;
        Ok((
            FeatureMap::new(c3, 8)?,
            FeatureMap::new(c4, 16)?,
            FeatureMap::new(c5, 32)?,
        ))
    }
}

fn all_finite(t: &Tensor) -> bool {
    t.flatten_all()
        .and_then(|v| v.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>())
        .map(|v| v.iter().all(|x| x.is_finite()))
        .unwrap_or(false)
}
