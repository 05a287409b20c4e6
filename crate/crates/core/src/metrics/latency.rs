use std::time::Instant;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::YoloMed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_fps: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub iterations: usize,
    pub hardware: String,
}

/// `model name` from /proc/cpuinfo (when present), architecture and thread count.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu} ({}, {threads} threads)", std::env::consts::ARCH)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Times `step` after `warmup_iters` untimed calls.
pub fn benchmark_latency(
    mut step: impl FnMut() -> Result<()>,
    warmup_iters: usize,
    timed_iters: usize,
) -> Result<LatencyStats> {
    if timed_iters < 10 {
        return Err(Error::Config(format!(
            "benchmark needs at least 10 timed iterations, got {timed_iters}"
        )));
    }
    for _ in 0..warmup_iters {
        step()?;
    }
    let mut ms = Vec::with_capacity(timed_iters);
    for _ in 0..timed_iters {
        let t = Instant::now();
        step()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = ms.iter().sum::<f64>() / ms.len() as f64;
    ms.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        mean_fps: 1e3 / mean_ms.max(1e-9),
        mean_ms,
        p50_ms: percentile(&ms, 0.5),
        p95_ms: percentile(&ms, 0.95),
        iterations: timed_iters,
        hardware: hardware_descriptor(),
    })
}

/// Single-image eval-mode forward passes at `input_size`.
pub fn benchmark_model(
    model: &YoloMed,
    input_size: usize,
    warmup_iters: usize,
    timed_iters: usize,
) -> Result<LatencyStats> {
    let x = (Tensor::ones(
        (1, 3, input_size, input_size),
        model.dtype(),
        model.store().device(),
    )? * 0.5)?;
    benchmark_latency(
        || {
            model.forward(&x, false)?;
            Ok(())
        },
        warmup_iters,
        timed_iters,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_workload_has_finite_ordered_stats() {
        let s = benchmark_latency(|| Ok(()), 2, 20).unwrap();
        assert!(s.mean_fps.is_finite() && s.mean_fps > 0.0);
        assert!(s.p95_ms >= s.p50_ms);
        assert!(!s.hardware.is_empty());
    }

    #[test]
    fn too_few_iterations_is_rejected() {
        assert!(benchmark_latency(|| Ok(()), 0, 5).is_err());
    }
}
