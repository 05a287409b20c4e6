//! Detection and segmentation metrics, latency measurement and the
//! interaction-output correlation diagnostic.

mod ap;
mod correlation;
mod latency;
mod seg;

use serde::{Deserialize, Serialize};

pub use ap::{
    average_precision, average_precision_range, box_iou, class_average_precision,
    per_class_average_precision, RECALL_POINTS,
};
pub use correlation::{
    csti_correlation_map, pearson, render_heatmap, CorrelationMap, CORRELATION_LABELS,
};
pub use latency::{benchmark_latency, benchmark_model, hardware_descriptor, LatencyStats};
pub use seg::{mean_iou, pixel_accuracy, SegConfusion};

/// Evaluation summary of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap50: f64,
    /// AP at the single IoU threshold 0.95.
    pub ap95: f64,
    /// AP averaged over IoU thresholds 0.50:0.05:0.95.
    pub ap50_95: f64,
    pub pa: f64,
    pub mean_iou: f64,
    pub per_class_ap50: Vec<(usize, f64)>,
    /// `None` for classes absent from both predictions and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub num_images: usize,
    /// Filled by benchmarking; evaluation alone leaves it empty so reports stay reproducible.
    pub latency: Option<LatencyStats>,
}
