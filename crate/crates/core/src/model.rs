//! The complete multi-task network.

use candle_core::{DType, Tensor};

use crate::csti::{Csti, CstiOutput};
use crate::datamodel::ModelConfig;
use crate::decoders::{
    fuse_features, CoupledHead, DecoupledHead, DetectionHead, Pan, RawPrediction, SegHead,
    SegLogits,
};
use crate::encoder::{Encoder, FeatureMap, NeckOutput};
use crate::error::Result;
use crate::nn::ParamStore;

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub raw: RawPrediction,
    pub seg: SegLogits,
    pub neck: NeckOutput,
    /// PAN outputs before fusion.
    pub x_det: [FeatureMap; 3],
    /// Stride-2 segmentation feature before fusion.
    pub x_seg: FeatureMap,
    pub csti: Option<CstiOutput>,
}

#[derive(Debug)]
pub struct YoloMed {
    cfg: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    pan: Pan,
    heads: Vec<DetectionHead>,
    seg_head: SegHead,
    csti: Option<Csti>,
}

impl YoloMed {
    pub fn new(cfg: &ModelConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(dtype, cfg.seed);
        let ch = cfg.scaled_channels();
        let mut root = store.root();
        let encoder = Encoder::new(&mut root, cfg)?;
        let pan = Pan::new(&mut root.sub("pan"), ch, cfg.scaled_depth(3))?;
        let mut head_scope = root.sub("head");
        let heads = ch
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut s = head_scope.sub(&i.to_string());
                Ok(if cfg.use_dh {
                    DetectionHead::Decoupled(Box::new(DecoupledHead::new(
                        &mut s,
                        c,
                        ch[0],
                        cfg.num_det_classes,
                        cfg.head_branch_depth,
                    )?))
                } else {
                    DetectionHead::Coupled(CoupledHead::new(&mut s, c, cfg.num_det_classes)?)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let seg_head = SegHead::new(
            &mut root.sub("seg_head"),
            ch[0],
            cfg.seg_channels,
            cfg.num_seg_classes,
        )?;
        let csti = if cfg.use_csti {
            Some(Csti::new(&mut root.sub("csti"), cfg)?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            store,
            encoder,
            pan,
            heads,
            seg_head,
            csti,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn pan(&self) -> &Pan {
        &self.pan
    }

    pub fn heads(&self) -> &[DetectionHead] {
        &self.heads
    }

    pub fn seg_head(&self) -> &SegHead {
        &self.seg_head
    }

    pub fn csti(&self) -> Option<&Csti> {
        self.csti.as_ref()
    }

    /// `images`: N x 3 x S x S in [0, 1], S = `input_size`.
    pub fn forward(&self, images: &Tensor, train: bool) -> Result<ModelOutput> {
        let neck = self.encoder.forward(images, train)?;
        let x_det = self.pan.forward(&neck, train)?;
        let x_seg = self.seg_head.features(&neck.p2_path, train)?;
        let csti = match &self.csti {
            Some(c) => Some(c.forward(&x_det, &x_seg)?),
            None => None,
        };
        let scales = self
            .heads
            .iter()
            .enumerate()
            .map(|(i, head)| {
                let fused = fuse_features(&x_det[i], csti.as_ref().map(|c| &c.det[i]))?;
                head.forward(&fused, train)
            })
            .collect::<Result<Vec<_>>>()?;
        let seg = self
            .seg_head
            .finish(&x_seg, csti.as_ref().map(|c| &c.seg), train)?;
        Ok(ModelOutput {
            raw: RawPrediction { scales },
            seg,
            neck,
            x_det,
            x_seg,
            csti,
        })
    }

    /// `(stride, h, w)` of the three detection grids.
    pub fn grids(&self) -> [(usize, usize, usize); 3] {
        let s = self.cfg.input_size;
        self.cfg.strides.map(|st| (st, s / st, s / st))
    }
}
