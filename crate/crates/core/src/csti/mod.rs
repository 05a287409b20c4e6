//! Cross-scale task interaction.
//!
//! The three detection features and the stride-2 segmentation feature are
//! projected to a common token width, flattened and concatenated into one
//! sequence, mixed by a single transformer layer, then split and restored to
//! their original shapes so they can be added back into both decoders.

mod tokens;
mod transformer;

pub use tokens::{
    concat_tokens, flatten_tokens, unflatten_tokens, ManifestEntry, TokenSequence, TokenSource,
};
pub use transformer::TransformerLayer;

use crate::datamodel::ModelConfig;
use crate::encoder::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::{ops, Conv2d, Scope};

const DET_SOURCES: [TokenSource; 3] = [TokenSource::Det1, TokenSource::Det2, TokenSource::Det3];

/// Restored features, shape-identical to the interaction inputs.
#[derive(Debug, Clone)]
pub struct CstiOutput {
    pub det: [FeatureMap; 3],
    pub seg: FeatureMap,
}

#[derive(Debug, Clone)]
pub struct Csti {
    det_tokenizers: Vec<Conv2d>,
    seg_tokenizer: Conv2d,
    transformer: TransformerLayer,
    det_restore: Vec<Conv2d>,
    seg_restore: Conv2d,
    det_channels: [usize; 3],
    seg_channels: usize,
    token_dim: usize,
}

impl Csti {
    pub fn new(scope: &mut Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        let det_channels = cfg.scaled_channels();
        let d = cfg.token_dim;
        let seg_channels = cfg.seg_channels;
        let mut det_tokenizers = Vec::new();
        let mut det_restore = Vec::new();
        for (i, &c) in det_channels.iter().enumerate() {
            det_tokenizers.push(Conv2d::new(
                &mut scope.sub(&format!("tokenize_det{}", i + 1)),
                c,
                d,
                1,
                1,
                true,
            )?);
        }
        let seg_tokenizer =
            Conv2d::new(&mut scope.sub("tokenize_seg"), seg_channels, d, 3, 2, true)?;
        let transformer = TransformerLayer::new(
            &mut scope.sub("transformer"),
            d,
            cfg.attn_heads,
            cfg.ffn_ratio,
        )?;
        for (i, &c) in det_channels.iter().enumerate() {
            det_restore.push(Conv2d::new(
                &mut scope.sub(&format!("restore_det{}", i + 1)),
                d,
                c,
                1,
                1,
                true,
            )?);
        }
        let seg_restore = Conv2d::new(&mut scope.sub("restore_seg"), d, seg_channels, 3, 1, true)?;
        Ok(Self {
            det_tokenizers,
            seg_tokenizer,
            transformer,
            det_restore,
            seg_restore,
            det_channels,
            seg_channels,
            token_dim: d,
        })
    }

    pub fn transformer(&self) -> &TransformerLayer {
        &self.transformer
    }

    /// 1x1 projection of each scale to the token width, flattened and
    /// concatenated in (det1, det2, det3) order.
    pub fn tokenize_detection_features(&self, x_det: &[FeatureMap; 3]) -> Result<TokenSequence> {
        let mut blocks = Vec::with_capacity(3);
        let mut manifest = Vec::with_capacity(3);
        for (i, x) in x_det.iter().enumerate() {
            if x.channels() != self.det_channels[i] {
                return Err(Error::Shape(format!(
                    "detection scale {} expects {} channels, got {}",
                    i + 1,
                    self.det_channels[i],
                    x.channels()
                )));
            }
            let y = self.det_tokenizers[i].forward(x.tensor())?;
            manifest.push(tokens::entry_for(DET_SOURCES[i], x, &y)?);
            blocks.push(flatten_tokens(&y)?);
        }
        TokenSequence::new(candle_core::Tensor::cat(&blocks, 1)?, manifest)
    }

    /// Stride-2 conv from `H/2 x W/2 x 32` to `H/4 x W/4 x d`, then flatten.
    pub fn tokenize_segmentation_features(&self, x_seg: &FeatureMap) -> Result<TokenSequence> {
        if x_seg.channels() != self.seg_channels {
            return Err(Error::Shape(format!(
                "segmentation feature expects {} channels, got {}",
                self.seg_channels,
                x_seg.channels()
            )));
        }
        if !x_seg.height().is_multiple_of(2) || !x_seg.width().is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "segmentation feature {}x{} has odd spatial dims",
                x_seg.height(),
                x_seg.width()
            )));
        }
        let y = self.seg_tokenizer.forward(x_seg.tensor())?;
        let entry = tokens::entry_for(TokenSource::Seg, x_seg, &y)?;
        TokenSequence::new(flatten_tokens(&y)?, vec![entry])
    }

    pub fn transformer_layer(&self, v: &TokenSequence) -> Result<TokenSequence> {
        self.transformer.forward(v)
    }

    /// Splits by manifest and restores each block to its source shape.
    pub fn detokenize(&self, v_hat: &TokenSequence) -> Result<CstiOutput> {
        let sources: Vec<TokenSource> = v_hat.manifest().iter().map(|e| e.source).collect();
        if sources
            != [
                TokenSource::Det1,
                TokenSource::Det2,
                TokenSource::Det3,
                TokenSource::Seg,
            ]
        {
            return Err(Error::Shape(format!(
                "detokenize expects sources (det1, det2, det3, seg), got {sources:?}"
            )));
        }
        if v_hat.token_dim() != self.token_dim {
            return Err(Error::Shape(format!(
                "expected token dim {}, got {}",
                self.token_dim,
                v_hat.token_dim()
            )));
        }
        let parts = v_hat.split()?;
        let mut det = Vec::with_capacity(3);
        for (i, (entry, block)) in parts.iter().take(3).enumerate() {
            let grid = unflatten_tokens(block, entry.height, entry.width)?;
            det.push(FeatureMap::new(
                self.det_restore[i].forward(&grid)?,
                entry.stride,
            )?);
        }
        let (entry, block) = &parts[3];
        let grid = unflatten_tokens(block, entry.height, entry.width)?;
        let seg = self.seg_restore.forward(&ops::upsample2x(&grid)?)?;
        let det: [FeatureMap; 3] = det.try_into().expect("three detection blocks");
        Ok(CstiOutput {
            det,
            seg: FeatureMap::new(seg, entry.stride)?,
        })
    }

    pub fn forward(&self, x_det: &[FeatureMap; 3], x_seg: &FeatureMap) -> Result<CstiOutput> {
        let v_det = self.tokenize_detection_features(x_det)?;
        let v_seg = self.tokenize_segmentation_features(x_seg)?;
        let v = concat_tokens(&v_det, &v_seg)?;
        let v_hat = self.transformer_layer(&v)?;
        self.detokenize(&v_hat)
    }
}

/// Total token count for a square input: `(H/8)^2 + (H/16)^2 + (H/32)^2 + (H/4)^2`.
pub fn token_count(input_size: usize) -> usize {
    [8, 16, 32, 4]
        .iter()
        .map(|s| (input_size / s) * (input_size / s))
        .sum()
}
