use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every architecture, loss and training hyperparameter of the network.
///
/// Serialized as YAML for the CLI and embedded as JSON in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub num_det_classes: usize,
    pub num_seg_classes: usize,

    /// Decoupled detection head; `false` selects a single coupled 1x1 conv.
    pub use_dh: bool,
    /// Cross-scale task-interaction module.
    pub use_csti: bool,

    pub token_dim: usize,
    pub attn_heads: usize,
    pub ffn_ratio: usize,

    pub strides: [usize; 3],
    pub neck_channels: [usize; 3],
    /// Channels of the stride-2 segmentation feature shared with the interaction module.
    pub seg_channels: usize,
    pub width_multiple: f64,
    pub depth_multiple: f64,
    /// 3x3 conv blocks per decoupled-head branch.
    pub head_branch_depth: usize,

    pub alpha_class: f64,
    pub alpha_obj: f64,
    pub alpha_box: f64,
    pub beta_det: f64,
    pub beta_seg: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,

    pub lr0: f64,
    pub lr_final_ratio: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub t0_epochs: f64,
    pub t_mult: f64,

    pub batch_size: usize,
    pub epochs: usize,
    pub eval_interval: usize,
    pub hflip_prob: f64,
    pub split_ratios: [f64; 3],

    pub eval_conf_thresh: f64,
    pub infer_conf_thresh: f64,
    pub nms_iou: f64,
    pub max_detections: usize,

    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 640,
            num_det_classes: 1,
            num_seg_classes: 2,
            use_dh: true,
            use_csti: true,
            token_dim: 64,
            attn_heads: 4,
            ffn_ratio: 2,
            strides: [8, 16, 32],
            neck_channels: [128, 256, 512],
            seg_channels: 32,
            width_multiple: 1.0,
            depth_multiple: 0.33,
            head_branch_depth: 1,
            alpha_class: 1.0 / 3.0,
            alpha_obj: 1.0 / 3.0,
            alpha_box: 1.0 / 3.0,
            beta_det: 0.5,
            beta_seg: 0.5,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            lr0: 1e-2,
            lr_final_ratio: 0.01,
            momentum: 0.937,
            weight_decay: 5e-4,
            warmup_epochs: 3.0,
            t0_epochs: 10.0,
            t_mult: 2.0,
            batch_size: 8,
            epochs: 100,
            eval_interval: 1,
            hflip_prob: 0.5,
            split_ratios: [0.7, 0.15, 0.15],
            eval_conf_thresh: 0.001,
            infer_conf_thresh: 0.25,
            nms_iou: 0.65,
            max_detections: 300,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Neck channel widths after applying `width_multiple`.
    pub fn scaled_channels(&self) -> [usize; 3] {
        self.neck_channels
            .map(|c| ((c as f64 * self.width_multiple).round() as usize).max(8))
    }

    /// Bottleneck repeats after applying `depth_multiple`.
    pub fn scaled_depth(&self, base: usize) -> usize {
        ((base as f64 * self.depth_multiple).round() as usize).max(1)
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim / self.attn_heads
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return err(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            ));
        }
        if self.strides != [8, 16, 32] {
            return err(format!(
                "strides must be (8, 16, 32), got {:?}",
                self.strides
            ));
        }
        if self.num_det_classes == 0 {
            return err("num_det_classes must be >= 1".into());
        }
        if self.num_seg_classes < 2 || self.num_seg_classes > 256 {
            return err("num_seg_classes must be in [2, 256]".into());
        }
        if self.attn_heads == 0 || !self.token_dim.is_multiple_of(self.attn_heads) {
            return err(format!(
                "token_dim {} is not divisible by attn_heads {}",
                self.token_dim, self.attn_heads
            ));
        }
        let alpha = self.alpha_class + self.alpha_obj + self.alpha_box;
        if (alpha - 1.0).abs() > 1e-9 {
            return err(format!("alpha weights sum to {alpha}, expected 1"));
        }
        let beta = self.beta_det + self.beta_seg;
        if (beta - 1.0).abs() > 1e-9 {
            return err(format!("beta weights sum to {beta}, expected 1"));
        }
        let weights = [
            self.alpha_class,
            self.alpha_obj,
            self.alpha_box,
            self.beta_det,
            self.beta_seg,
        ];
        if weights.iter().any(|w| *w < 0.0) {
            return err("loss weights must be non-negative".into());
        }
        if self.lr0.is_nan()
            || self.lr0 <= 0.0
            || self.lr_final_ratio.is_nan()
            || self.lr_final_ratio <= 0.0
        {
            return err("learning rates must be positive".into());
        }
        if self.t0_epochs <= 0.0 || self.t_mult < 1.0 {
            return err("scheduler requires t0_epochs > 0 and t_mult >= 1".into());
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return err("batch_size and eval_interval must be >= 1".into());
        }
        for t in [self.eval_conf_thresh, self.infer_conf_thresh, self.nms_iou] {
            if !(0.0..=1.0).contains(&t) {
                return err(format!("threshold {t} outside [0, 1]"));
            }
        }
        if self.width_multiple <= 0.0 || self.depth_multiple <= 0.0 {
            return err("width/depth multiples must be positive".into());
        }
        Ok(())
    }

    pub fn from_yaml_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_yaml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_yaml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_yaml_str(&text)
    }

    pub fn to_yaml(&self) -> Result<String> {
        serde_yaml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.scaled_channels(), [128, 256, 512]);
        assert_eq!(cfg.head_dim(), 16);
    }

    #[test]
    fn rejects_bad_input_size_and_weights() {
        let cfg = ModelConfig {
            input_size: 100,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            beta_seg: 0.6,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            alpha_box: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn yaml_round_trip_and_partial_files() {
        let cfg = ModelConfig {
            input_size: 256,
            use_csti: false,
            ..Default::default()
        };
        let back = ModelConfig::from_yaml_str(&cfg.to_yaml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial = ModelConfig::from_yaml_str("input_size: 128\nuse_dh: false\n").unwrap();
        assert_eq!(partial.input_size, 128);
        assert!(!partial.use_dh);
        assert_eq!(partial.momentum, 0.937);
        assert!(ModelConfig::from_yaml_str("bogus_key: 1\n").is_err());
    }
}
