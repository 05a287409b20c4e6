use std::path::Path;

use candle_core::{DType, Tensor};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::datamodel::ImageSample;
use crate::encoder::FeatureMap;
use crate::engine::letterbox::{images_to_tensor, letterbox_sample};
use crate::error::{Error, Result};
use crate::model::YoloMed;

pub const CORRELATION_LABELS: [&str; 4] = ["det1", "det2", "det3", "seg"];

/// Pearson correlations between the channel-averaged interaction outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMap {
    pub labels: Vec<String>,
    /// NaN where a map has zero variance.
    pub values: [[f64; 4]; 4],
}

impl CorrelationMap {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a][b]
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 0.0 || vb <= 0.0 {
        return f64::NAN;
    }
    (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
}

/// Channel mean of image 0, resampled to `size x size` (box average when
/// shrinking, nearest when enlarging).
fn channel_mean_on_grid(x: &FeatureMap, size: usize) -> Result<Vec<f64>> {
    let m = x.tensor().get(0)?.mean(0)?.to_dtype(DType::F64)?;
    let (h, w) = m.dims2()?;
    let data = m.flatten_all()?.to_vec1::<f64>()?;
    let mut out = vec![0.0; size * size];
    for gy in 0..size {
        for gx in 0..size {
            let (y0, y1) = (
                gy * h / size,
                ((gy + 1) * h).div_ceil(size).max(gy * h / size + 1),
            );
            let (x0, x1) = (
                gx * w / size,
                ((gx + 1) * w).div_ceil(size).max(gx * w / size + 1),
            );
            let mut sum = 0.0;
            for y in y0..y1.min(h) {
                for xx in x0..x1.min(w) {
                    sum += data[y * w + xx];
                }
            }
            out[gy * size + gx] = sum / ((y1.min(h) - y0) * (x1.min(w) - x0)) as f64;
        }
    }
    Ok(out)
}

/// Correlation of the four interaction outputs for one image, on the stride-8 grid.
pub fn csti_correlation_map(model: &YoloMed, sample: &ImageSample) -> Result<CorrelationMap> {
    if model.csti().is_none() {
        return Err(Error::Config(
            "correlation map requires use_csti = true".into(),
        ));
    }
    let size = model.config().input_size;
    let (boxed, _) = letterbox_sample(sample, size);
    let x: Tensor = images_to_tensor(&[&boxed.image], model.dtype())?;
    let out = model.forward(&x, false)?;
    let csti = out.csti.expect("interaction enabled");
    let grid = size / 8;
    let maps = [
        channel_mean_on_grid(&csti.det[0], grid)?,
        channel_mean_on_grid(&csti.det[1], grid)?,
        channel_mean_on_grid(&csti.det[2], grid)?,
        channel_mean_on_grid(&csti.seg, grid)?,
    ];
    let mut values = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            let r = pearson(&maps[i], &maps[j]);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMap {
        labels: CORRELATION_LABELS.iter().map(|s| s.to_string()).collect(),
        values,
    })
}

/// Blue (-1) / white (0) / red (+1) heatmap, `cell` pixels per entry; NaN is gray.
pub fn render_heatmap(map: &CorrelationMap, cell: u32, path: &Path) -> Result<()> {
    let img = RgbImage::from_fn(4 * cell, 4 * cell, |x, y| {
        let v = map.values[(y / cell) as usize][(x / cell) as usize];
        if v.is_nan() {
            return Rgb([128, 128, 128]);
        }
        let t = v.clamp(-1.0, 1.0);
        let fade = |a: f64| (255.0 * (1.0 - a)).round() as u8;
        if t >= 0.0 {
            Rgb([255, fade(t), fade(t)])
        } else {
            Rgb([fade(-t), fade(-t), 255])
        }
    });
    img.save(path).map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0, 5.0];
        assert!((pearson(&a, &a) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -2.0 * v + 1.0).collect();
        assert!((pearson(&a, &neg) + 1.0).abs() < 1e-12);
        assert!(pearson(&a, &[2.0; 4]).is_nan());
    }
}
