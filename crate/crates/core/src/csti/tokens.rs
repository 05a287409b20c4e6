use candle_core::Tensor;

use crate::encoder::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSource {
    Det1,
    Det2,
    Det3,
    Seg,
}

/// What a contiguous run of tokens came from, enough to undo the flattening.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source: TokenSource,
    pub height: usize,
    pub width: usize,
    /// Channel count of the feature before tokenization.
    pub channels: usize,
    pub stride: usize,
}

impl ManifestEntry {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `N x n x d` tokens plus the manifest describing their provenance.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    tokens: Tensor,
    manifest: Vec<ManifestEntry>,
}

impl TokenSequence {
    pub fn new(tokens: Tensor, manifest: Vec<ManifestEntry>) -> Result<Self> {
        let (_, n, _) = tokens.dims3()?;
        let expected: usize = manifest.iter().map(ManifestEntry::len).sum();
        if n != expected {
            return Err(Error::Shape(format!(
                "token count {n} does not match manifest total {expected}"
            )));
        }
        Ok(Self { tokens, manifest })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.tokens.dims()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.dims()[2]
    }

    /// Same manifest, new token values (e.g. after the transformer layer).
    pub fn with_tokens(&self, tokens: Tensor) -> Result<Self> {
        if tokens.dims() != self.tokens.dims() {
            return Err(Error::Shape(format!(
                "replacement tokens {:?} differ from {:?}",
                tokens.dims(),
                self.tokens.dims()
            )));
        }
        Ok(Self {
            tokens,
            manifest: self.manifest.clone(),
        })
    }

    /// Per-source token blocks, `N x n_i x d`, in manifest order.
    pub fn split(&self) -> Result<Vec<(ManifestEntry, Tensor)>> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.manifest.len());
        for entry in &self.manifest {
            out.push((*entry, self.tokens.narrow(1, offset, entry.len())?));
            offset += entry.len();
        }
        Ok(out)
    }
}

/// `N x d x h x w` -> `N x (h w) x d`, row-major over (h, w).
pub fn flatten_tokens(x: &Tensor) -> Result<Tensor> {
    let (n, d, h, w) = x.dims4()?;
    Ok(x.permute((0, 2, 3, 1))?.reshape((n, h * w, d))?)
}

/// Inverse of [`flatten_tokens`].
pub fn unflatten_tokens(tokens: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (n, len, d) = tokens.dims3()?;
    if len != height * width {
        return Err(Error::Shape(format!(
            "{len} tokens cannot be reshaped to {height}x{width}"
        )));
    }
    Ok(tokens
        .reshape((n, height, width, d))?
        .permute((0, 3, 1, 2))?
        .contiguous()?)
}

pub(crate) fn entry_for(
    source: TokenSource,
    x: &FeatureMap,
    tokenized: &Tensor,
) -> Result<ManifestEntry> {
    let (_, _, h, w) = tokenized.dims4()?;
    Ok(ManifestEntry {
        source,
        height: h,
        width: w,
        channels: x.channels(),
        stride: x.stride(),
    })
}

/// Joins two sequences along the token axis.
pub fn concat_tokens(a: &TokenSequence, b: &TokenSequence) -> Result<TokenSequence> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Shape(
            "cannot concatenate an empty token sequence".into(),
        ));
    }
    if a.token_dim() != b.token_dim() {
        return Err(Error::Shape(format!(
            "token dims differ: {} vs {}",
            a.token_dim(),
            b.token_dim()
        )));
    }
    let tokens = Tensor::cat(&[a.tokens(), b.tokens()], 1)?;
    let manifest = a.manifest.iter().chain(&b.manifest).copied().collect();
    TokenSequence::new(tokens, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn seq(
        n: usize,
        h: usize,
        w: usize,
        d: usize,
        source: TokenSource,
        offset: f64,
    ) -> TokenSequence {
        let t = (Tensor::arange(0f64, (n * h * w * d) as f64, &Device::Cpu).unwrap() + offset)
            .unwrap()
            .reshape((n, h * w, d))
            .unwrap();
        TokenSequence::new(
            t,
            vec![ManifestEntry {
                source,
                height: h,
                width: w,
                channels: d,
                stride: 8,
            }],
        )
        .unwrap()
    }

    #[test]
    fn split_inverts_concat_bit_exactly() {
        let a = seq(2, 3, 4, 5, TokenSource::Det1, 0.25);
        let b = seq(2, 2, 2, 5, TokenSource::Seg, 1000.5);
        let joined = concat_tokens(&a, &b).unwrap();
        assert_eq!(joined.len(), 16);
        let parts = joined.split().unwrap();
        assert_eq!(parts.len(), 2);
        let v = |t: &Tensor| t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(v(&parts[0].1), v(a.tokens()));
        assert_eq!(v(&parts[1].1), v(b.tokens()));
        assert_eq!(parts[1].0.source, TokenSource::Seg);
    }

    #[test]
    fn concat_rejects_dim_mismatch() {
        let a = seq(1, 2, 2, 4, TokenSource::Det1, 0.0);
        let b = seq(1, 2, 2, 5, TokenSource::Seg, 0.0);
        assert!(concat_tokens(&a, &b).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let x = Tensor::arange(0f64, 2.0 * 3.0 * 4.0 * 5.0, &Device::Cpu)
            .unwrap()
            .reshape((2, 3, 4, 5))
            .unwrap();
        let t = flatten_tokens(&x).unwrap();
        assert_eq!(t.dims(), &[2, 20, 3]);
        // token (row 1, col 2) of image 0 holds the channel vector at that pixel
        let tok = t.get(0).unwrap().get(7).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(tok, vec![7.0, 27.0, 47.0]);
        let back = unflatten_tokens(&t, 4, 5).unwrap();
        assert_eq!(
            back.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            x.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
    }
}
