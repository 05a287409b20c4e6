use candle_core::Tensor;

use super::TokenSequence;
use crate::error::{Error, Result};
use crate::nn::{ops, LayerNorm, Linear, Scope};

/// Queries per attention block; bounds memory to O(chunk * n) per head.
const QUERY_CHUNK: usize = 2048;

/// One transformer layer over the joint token sequence:
/// `v' = MHSA(Q, K, V) + v`, then `v_hat = MLP(LN(v')) + v'`.
///
/// There is no normalization in front of the attention and no positional
/// encoding, so the layer is permutation-equivariant over tokens.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
    dim: usize,
}

impl TransformerLayer {
    pub fn new(scope: &mut Scope<'_>, dim: usize, heads: usize, ffn_ratio: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "token dim {dim} not divisible by {heads} heads"
            )));
        }
        let hidden = dim * ffn_ratio;
        Ok(Self {
            q: Linear::new(&mut scope.sub("q"), dim, dim)?,
            k: Linear::new(&mut scope.sub("k"), dim, dim)?,
            v: Linear::new(&mut scope.sub("v"), dim, dim)?,
            out: Linear::new(&mut scope.sub("out"), dim, dim)?,
            norm: LayerNorm::new(&mut scope.sub("norm"), dim)?,
            fc1: Linear::new(&mut scope.sub("fc1"), dim, hidden)?,
            fc2: Linear::new(&mut scope.sub("fc2"), hidden, dim)?,
            heads,
            dim,
        })
    }

    /// `N x n x d` -> `N x heads x n x head_dim`
    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, _) = x.dims3()?;
        Ok(x.reshape((b, n, self.heads, self.dim / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    fn projections(&self, v: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (_, _, d) = v.dims3()?;
        if d != self.dim {
            return Err(Error::Shape(format!(
                "expected token dim {}, got {d}",
                self.dim
            )));
        }
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        let q = (self.split_heads(&self.q.forward(v)?)? * scale)?;
        let k = self.split_heads(&self.k.forward(v)?)?;
        let val = self.split_heads(&self.v.forward(v)?)?;
        Ok((q, k, val))
    }

    /// Softmax attention weights, `N x heads x n x n`. Test/diagnostic helper.
    pub fn attention_weights(&self, v: &TokenSequence) -> Result<Tensor> {
        let (q, k, _) = self.projections(v.tokens())?;
        let scores = q.matmul(&k.transpose(2, 3)?.contiguous()?)?;
        ops::softmax(&scores, 3)
    }

    fn attention(&self, v: &Tensor) -> Result<Tensor> {
        let (b, n, _) = v.dims3()?;
        let (q, k, val) = self.projections(v)?;
        let kt = k.transpose(2, 3)?.contiguous()?;
        let mut chunks = Vec::with_capacity(n.div_ceil(QUERY_CHUNK));
        let mut start = 0;
        while start < n {
            let len = QUERY_CHUNK.min(n - start);
            let qc = q.narrow(2, start, len)?;
            let w = ops::softmax(&qc.matmul(&kt)?, 3)?;
            chunks.push(w.matmul(&val)?);
            start += len;
        }
        let heads = if chunks.len() == 1 {
            chunks.pop().expect("one chunk")
        } else {
            Tensor::cat(&chunks, 2)?
        };
        let merged = heads.transpose(1, 2)?.reshape((b, n, self.dim))?;
        self.out.forward(&merged)
    }

    pub fn forward(&self, v: &TokenSequence) -> Result<TokenSequence> {
        let x = v.tokens();
        let attended = (self.attention(x)? + x)?;
        let hidden = self
            .fc1
            .forward(&self.norm.forward(&attended)?)?
            .gelu_erf()?;
        let out = (self.fc2.forward(&hidden)? + &attended)?;
        v.with_tokens(out)
    }
}
