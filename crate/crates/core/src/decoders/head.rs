use candle_core::Tensor;

use super::ScalePrediction;
use crate::encoder::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnAct, Scope};

/// Initial logit for class and objectness outputs, so that every cell
/// starts near probability 0.01.
const PRIOR_LOGIT: f64 = -4.59511985013459;

fn set_bias(conv: &Conv2d, value: f64) -> Result<()> {
    if let Some(b) = conv.bias() {
        b.set(&(b.ones_like()? * value)?)?;
    }
    Ok(())
}

/// Shared 1x1 stem followed by separate classification and regression
/// branches; objectness is predicted from the regression branch.
#[derive(Debug, Clone)]
pub struct DecoupledHead {
    stem: ConvBnAct,
    cls_convs: Vec<ConvBnAct>,
    reg_convs: Vec<ConvBnAct>,
    cls_pred: Conv2d,
    reg_pred: Conv2d,
    obj_pred: Conv2d,
    in_channels: usize,
}

impl DecoupledHead {
    pub fn new(
        scope: &mut Scope<'_>,
        in_channels: usize,
        hidden: usize,
        num_classes: usize,
        branch_depth: usize,
    ) -> Result<Self> {
        let stem = ConvBnAct::new(&mut scope.sub("stem"), in_channels, hidden, 1, 1)?;
        let mut branch = |name: &str| -> Result<Vec<ConvBnAct>> {
            let mut s = scope.sub(name);
            (0..branch_depth)
                .map(|i| ConvBnAct::new(&mut s.sub(&i.to_string()), hidden, hidden, 3, 1))
                .collect()
        };
        let cls_convs = branch("cls_convs")?;
        let reg_convs = branch("reg_convs")?;
        let cls_pred = Conv2d::new(&mut scope.sub("cls_pred"), hidden, num_classes, 1, 1, true)?;
        let reg_pred = Conv2d::new(&mut scope.sub("reg_pred"), hidden, 4, 1, 1, true)?;
        let obj_pred = Conv2d::new(&mut scope.sub("obj_pred"), hidden, 1, 1, 1, true)?;
        set_bias(&cls_pred, PRIOR_LOGIT)?;
        set_bias(&obj_pred, PRIOR_LOGIT)?;
        Ok(Self {
            stem,
            cls_convs,
            reg_convs,
            cls_pred,
            reg_pred,
            obj_pred,
            in_channels,
        })
    }

    pub fn forward(&self, x: &FeatureMap, train: bool) -> Result<ScalePrediction> {
        check_channels(x, self.in_channels)?;
        let stem = self.stem.forward(x.tensor(), train)?;
        let mut cls = stem.clone();
        for c in &self.cls_convs {
            cls = c.forward(&cls, train)?;
        }
        let mut reg = stem;
        for c in &self.reg_convs {
            reg = c.forward(&reg, train)?;
        }
        Ok(ScalePrediction {
            stride: x.stride(),
            cls_logits: self.cls_pred.forward(&cls)?,
            obj_logits: self.obj_pred.forward(&reg)?,
            box_reg: self.reg_pred.forward(&reg)?,
        })
    }
}

/// Single 1x1 conv emitting `4 + 1 + C` channels: box, objectness, classes.
#[derive(Debug, Clone)]
pub struct CoupledHead {
    pred: Conv2d,
    num_classes: usize,
    in_channels: usize,
}

impl CoupledHead {
    pub fn new(scope: &mut Scope<'_>, in_channels: usize, num_classes: usize) -> Result<Self> {
        let pred = Conv2d::new(
            &mut scope.sub("pred"),
            in_channels,
            num_classes + 5,
            1,
            1,
            true,
        )?;
        if let Some(b) = pred.bias() {
            let mut init = vec![0.0f64; num_classes + 5];
            let box_bias = b
                .narrow(0, 0, 4)?
                .to_dtype(candle_core::DType::F64)?
                .to_vec1::<f64>()?;
            init[..4].copy_from_slice(&box_bias);
            init[4..].fill(PRIOR_LOGIT);
            b.set(&Tensor::new(init, b.device())?.to_dtype(b.dtype())?)?;
        }
        Ok(Self {
            pred,
            num_classes,
            in_channels,
        })
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<ScalePrediction> {
        check_channels(x, self.in_channels)?;
        let y = self.pred.forward(x.tensor())?;
        Ok(ScalePrediction {
            stride: x.stride(),
            box_reg: y.narrow(1, 0, 4)?,
            obj_logits: y.narrow(1, 4, 1)?,
            cls_logits: y.narrow(1, 5, self.num_classes)?,
        })
    }
}

fn check_channels(x: &FeatureMap, expected: usize) -> Result<()> {
    if x.channels() != expected {
        return Err(Error::Shape(format!(
            "detection head expects {expected} channels, got {}",
            x.channels()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum DetectionHead {
    Decoupled(Box<DecoupledHead>),
    Coupled(CoupledHead),
}

impl DetectionHead {
    pub fn forward(&self, x: &FeatureMap, train: bool) -> Result<ScalePrediction> {
        match self {
            DetectionHead::Decoupled(h) => h.forward(x, train),
            DetectionHead::Coupled(h) => h.forward(x),
        }
    }
}
