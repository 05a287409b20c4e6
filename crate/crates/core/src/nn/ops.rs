//! Differentiable tensor ops missing from (or not differentiable in) candle.

use candle_core::backend::BackendStorage;
use candle_core::{bail, CpuStorage, CustomOp1, Layout, Shape, Tensor};

use crate::error::Result;

struct Atan;

impl CustomOp1 for Atan {
    fn name(&self) -> &'static str {
        "atan"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let Some((start, end)) = layout.contiguous_offsets() else {
            bail!("atan requires a contiguous input")
        };
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(v[start..end].iter().map(|x| x.atan()).collect()),
            CpuStorage::F64(v) => CpuStorage::F64(v[start..end].iter().map(|x| x.atan()).collect()),
            other => bail!("atan: unsupported dtype {:?}", other.dtype()),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(
        &self,
        arg: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        let denom = (arg.sqr()? + 1.0)?;
        Ok(Some(grad_res.div(&denom)?))
    }
}

/// Elementwise arctangent with gradient 1 / (1 + x^2).
pub fn atan(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Atan)?)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, dim)?)
}

/// Stride-1 max pooling with "same" output size on an NCHW tensor.
///
/// Edge replication is equivalent to -inf padding for a max, and keeps the
/// op expressible with differentiable primitives.
pub fn max_pool_same(x: &Tensor, kernel: usize) -> Result<Tensor> {
    assert!(kernel % 2 == 1, "kernel must be odd");
    let pad = kernel / 2;
    let (_, _, h, w) = x.dims4()?;
    let padded = x.pad_with_same(2, pad, pad)?.pad_with_same(3, pad, pad)?;
    let mut rows = padded.narrow(3, 0, w)?;
    for i in 1..kernel {
        rows = rows.maximum(&padded.narrow(3, i, w)?)?;
    }
    let mut out = rows.narrow(2, 0, h)?;
    for i in 1..kernel {
        out = out.maximum(&rows.narrow(2, i, h)?)?;
    }
    Ok(out)
}

/// Nearest-neighbour 2x upsampling of an NCHW tensor.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(2 * h, 2 * w)?)
}
