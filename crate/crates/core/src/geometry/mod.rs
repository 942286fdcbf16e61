//! Axis-aligned 3D boxes, overlap, suppression, neighbor graphs,
//! orientation binning and the viewpoint / projection utilities.

mod camera;
mod knn;

pub use camera::{estimate_viewpoint, project_box, CameraPose, Intrinsics, Rect2, VIEWPOINT_ATTEMPTS, VIEWPOINT_HEIGHT, VIEWPOINT_RADIUS};
pub use knn::knn_graph;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ORIENTATION_BINS: usize = 6;
const BIN_WIDTH_DEG: f64 = 180.0 / ORIENTATION_BINS as f64;

/// Axis-aligned box given by its center and side lengths (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub center: [f64; 3],
    pub lengths: [f64; 3],
}

impl Box3 {
    pub fn new(center: [f64; 3], lengths: [f64; 3]) -> Result<Self> {
        let b = Box3 { center, lengths };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.center.iter().chain(&self.lengths).any(|v| !v.is_finite()) {
            return Err(Error::Argument("box has non-finite coordinates".into()));
        }
        if self.lengths.iter().any(|&l| l <= 0.0) {
            return Err(Error::Argument(format!("box lengths {:?} must be positive", self.lengths)));
        }
        Ok(())
    }

    pub fn min_corner(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] - self.lengths[i] / 2.0)
    }

    pub fn max_corner(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] + self.lengths[i] / 2.0)
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        let (lo, hi) = (self.min_corner(), self.max_corner());
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (lo, hi) = (self.min_corner(), self.max_corner());
        std::array::from_fn(|k| {
            [
                if k & 1 == 0 { lo[0] } else { hi[0] },
                if k & 2 == 0 { lo[1] } else { hi[1] },
                if k & 4 == 0 { lo[2] } else { hi[2] },
            ]
        })
    }

    /// Smallest box containing every box in `boxes`.
    pub fn enclosing(boxes: &[Box3]) -> Option<Box3> {
        let first = boxes.first()?;
        let (mut lo, mut hi) = (first.min_corner(), first.max_corner());
        for b in &boxes[1..] {
            let (l, h) = (b.min_corner(), b.max_corner());
            for i in 0..3 {
                lo[i] = lo[i].min(l[i]);
                hi[i] = hi[i].max(h[i]);
            }
        }
        Some(Box3 {
            center: std::array::from_fn(|i| (lo[i] + hi[i]) / 2.0),
            lengths: std::array::from_fn(|i| hi[i] - lo[i]),
        })
    }
}

pub fn intersection_volume(a: &Box3, b: &Box3) -> f64 {
    let (alo, ahi, blo, bhi) = (a.min_corner(), a.max_corner(), b.min_corner(), b.max_corner());
    (0..3)
        .map(|i| (ahi[i].min(bhi[i]) - alo[i].max(blo[i])).max(0.0))
        .product()
}

/// Intersection over union of two axis-aligned boxes.
pub fn box_iou(a: &Box3, b: &Box3) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy non-maximum suppression. Boxes are visited by descending score
/// (ties by lower index); a box is kept iff its IoU with every kept box is
/// below `iou_threshold`. Returns kept indices in visiting order.
pub fn nms(boxes: &[Box3], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::Argument(format!("NMS threshold {iou_threshold} outside [0, 1]")));
    }
    if boxes.len() != scores.len() {
        return Err(Error::Argument(format!(
            "{} boxes but {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| box_iou(&boxes[i], &boxes[k]) < iou_threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Equal-width 30° class of an angular deviation in [0°, 180°).
pub fn orientation_bin(angle_deg: f64) -> Result<usize> {
    if !(0.0..180.0).contains(&angle_deg) {
        return Err(Error::Argument(format!("angle {angle_deg}° outside [0, 180)")));
    }
    Ok(((angle_deg / BIN_WIDTH_DEG).floor() as usize).min(ORIENTATION_BINS - 1))
}
