use log::warn;

use crate::datamodel::BoundingBox;

/// Center-prior radius, in units of the grid stride.
const CENTER_RADIUS: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positive {
    pub gx: usize,
    pub gy: usize,
    pub gt: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAssignment {
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    pub positives: Vec<Positive>,
}

impl ScaleAssignment {
    /// Dense objectness target, row-major `height x width`.
    pub fn objectness_target(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.height * self.width];
        for p in &self.positives {
            t[p.gy * self.width + p.gx] = 1.0;
        }
        t
    }
}

/// Targets for one image across the three grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub scales: Vec<ScaleAssignment>,
}

impl Assignment {
    pub fn num_positives(&self) -> usize {
        self.scales.iter().map(|s| s.positives.len()).sum()
    }
}

/// Stride responsible for a box of the given size.
pub fn stride_for_box(b: &BoundingBox) -> usize {
    let size = b.area().sqrt();
    if size < 64.0 {
        8
    } else if size < 128.0 {
        16
    } else {
        32
    }
}

/// Assigns each box to one scale by size, and marks as positive the cell
/// containing its center plus every cell whose center lies inside the box
/// and within 2.5 strides of the box center. A cell claimed by several
/// boxes goes to the smallest one.
pub fn assign_targets(gt_boxes: &[BoundingBox], grids: &[(usize, usize, usize)]) -> Assignment {
    let mut owner: Vec<Vec<Option<(f64, BoundingBox)>>> =
        grids.iter().map(|&(_, h, w)| vec![None; h * w]).collect();

    for b in gt_boxes {
        if b.area().is_nan() || b.area() <= 0.0 {
            warn!("skipping zero-area ground-truth box {b:?}");
            continue;
        }
        let stride = stride_for_box(b);
        let Some(level) = grids.iter().position(|g| g.0 == stride) else {
            warn!("no grid with stride {stride} for box {b:?}");
            continue;
        };
        let (_, h, w) = grids[level];
        let s = stride as f64;
        let (cx, cy) = b.center();
        let center_cell = (
            ((cx / s).floor().max(0.0) as usize).min(w - 1),
            ((cy / s).floor().max(0.0) as usize).min(h - 1),
        );
        let radius = CENTER_RADIUS * s;
        let mut claim = |gx: usize, gy: usize| {
            let slot = &mut owner[level][gy * w + gx];
            if slot.is_none_or(|(area, _)| b.area() < area) {
                *slot = Some((b.area(), *b));
            }
        };
        claim(center_cell.0, center_cell.1);
        let lo_x = ((cx - radius) / s).floor().max(0.0) as usize;
        let hi_x = (((cx + radius) / s).ceil() as usize).min(w);
        let lo_y = ((cy - radius) / s).floor().max(0.0) as usize;
        let hi_y = (((cy + radius) / s).ceil() as usize).min(h);
        for gy in lo_y..hi_y {
            for gx in lo_x..hi_x {
                let (px, py) = ((gx as f64 + 0.5) * s, (gy as f64 + 0.5) * s);
                let near = (px - cx).abs() <= radius && (py - cy).abs() <= radius;
                let inside = px > b.x_min && px < b.x_max && py > b.y_min && py < b.y_max;
                if near && inside {
                    claim(gx, gy);
                }
            }
        }
    }

    let scales = grids
        .iter()
        .zip(owner)
        .map(|(&(stride, height, width), cells)| ScaleAssignment {
            stride,
            height,
            width,
            positives: cells
                .into_iter()
                .enumerate()
                .filter_map(|(k, o)| {
                    o.map(|(_, gt)| Positive {
                        gx: k % width,
                        gy: k / width,
                        gt,
                    })
                })
                .collect(),
        })
        .collect();
    Assignment { scales }
}
