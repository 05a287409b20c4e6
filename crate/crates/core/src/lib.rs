//! Multi-task polyp detection and segmentation network.
//!
//! A shared CSP backbone with SPP and FPN feeds two task decoders: a PAN with
//! (optionally decoupled) anchor-free detection heads, and an upsampling
//! segmentation head. Between them, an optional cross-scale task-interaction
//! block flattens the three detection scales and the segmentation feature
//! into one token sequence, runs a single transformer layer over it, and adds
//! the restored maps back into both decoders.

pub mod csti;
pub mod datamodel;
pub mod decoders;
pub mod encoder;
pub mod engine;
mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;

pub use datamodel::{BoundingBox, Dataset, ImageSample, ModelConfig, SegmentationMask};
pub use decoders::{Detection, RawPrediction, SegLogits};
pub use encoder::{FeatureMap, NeckOutput};
pub use error::{Error, Result};
pub use losses::LossBreakdown;
pub use metrics::{CorrelationMap, EvalReport};
pub use model::{ModelOutput, YoloMed};
