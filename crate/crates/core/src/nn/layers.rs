use candle_core::{Tensor, Var, D};

use super::{ParamKind, Scope};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    out_channels: usize,
}

impl Conv2d {
    pub fn new(
        scope: &mut Scope<'_>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = scope.fan_in_uniform(
            "weight",
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            ParamKind::Weight,
        )?;
        let bias = if bias {
            Some(scope.fan_in_uniform("bias", &[out_channels], fan_in, ParamKind::Bias)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
            out_channels,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, self.out_channels, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Batch normalization over (N, H, W) with running statistics for eval mode.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    channels: usize,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(scope: &mut Scope<'_>, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: scope.constant("weight", &[channels], 1.0, ParamKind::Norm)?,
            beta: scope.constant("bias", &[channels], 0.0, ParamKind::Norm)?,
            running_mean: scope.constant("running_mean", &[channels], 0.0, ParamKind::Buffer)?,
            running_var: scope.constant("running_var", &[channels], 1.0, ParamKind::Buffer)?,
            channels,
            eps: 1e-3,
            momentum: 0.03,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let shape = (1, self.channels, 1, 1);
        let (mean, var) = if train {
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            self.update_running(&mean, &var, x.elem_count() / self.channels)?;
            (mean, var)
        } else {
            (
                self.running_mean.reshape(shape)?,
                self.running_var.reshape(shape)?,
            )
        };
        let inv_std = (var + self.eps)?.sqrt()?.recip()?;
        let y = x.broadcast_sub(&mean)?.broadcast_mul(&inv_std)?;
        Ok(y.broadcast_mul(&self.gamma.reshape(shape)?)?
            .broadcast_add(&self.beta.reshape(shape)?)?)
    }

    fn update_running(&self, mean: &Tensor, var: &Tensor, count: usize) -> Result<()> {
        let m = self.momentum;
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        let mean = mean.detach().flatten_all()?;
        let var = (var.detach().flatten_all()? * unbias)?;
        let rm = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean * m)?)?;
        let rv = ((self.running_var.as_tensor() * (1.0 - m))? + (var * m)?)?;
        self.running_mean.set(&rm)?;
        self.running_var.set(&rv)?;
        Ok(())
    }
}

/// Convolution, batch norm and SiLU: the basic block of the backbone and neck.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnAct {
    pub fn new(
        scope: &mut Scope<'_>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let conv = Conv2d::new(
            &mut scope.sub("conv"),
            in_channels,
            out_channels,
            kernel,
            stride,
            false,
        )?;
        let bn = BatchNorm2d::new(&mut scope.sub("bn"), out_channels)?;
        Ok(Self { conv, bn })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        Ok(self.bn.forward(&y, train)?.silu()?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(scope: &mut Scope<'_>, in_features: usize, out_features: usize) -> Result<Self> {
        let weight = scope.fan_in_uniform(
            "weight",
            &[out_features, in_features],
            in_features,
            ParamKind::Weight,
        )?;
        let bias = scope.fan_in_uniform("bias", &[out_features], in_features, ParamKind::Bias)?;
        Ok(Self { weight, bias })
    }

    /// Applies the map over the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(y.broadcast_add(&self.bias)?)
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Var,
    beta: Var,
    eps: f64,
}

impl LayerNorm {
    pub fn new(scope: &mut Scope<'_>, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: scope.constant("weight", &[dim], 1.0, ParamKind::Norm)?,
            beta: scope.constant("bias", &[dim], 0.0, ParamKind::Norm)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let y = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(y.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}
