use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::geometry::Box3;

pub const FEATURE_DIM: usize = 128;
pub const NUM_CLASSES: usize = 18;
/// xyz + 132 per-point features.
pub const POINT_WIDTH: usize = 135;
pub const MAX_PROPOSALS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: u64,
    pub center: [f64; 3],
    pub lengths: [f64; 3],
    pub semantic_class: usize,
    pub feature: Vec<f32>,
    #[serde(default)]
    pub captions: Vec<String>,
    /// Angular deviation (degrees, [0, 180)) to other objects, keyed by id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation_labels: Option<BTreeMap<u64, f64>>,
    #[serde(default)]
    pub orientation_masked: bool,
}

impl ObjectRecord {
    pub fn bbox(&self) -> Box3 {
        Box3 {
            center: self.center,
            lengths: self.lengths,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center: [f64; 3],
    pub lengths: [f64; 3],
    pub semantic_class: usize,
    pub feature: Vec<f32>,
    pub objectness: f64,
}

impl Detection {
    pub fn bbox(&self) -> Box3 {
        Box3 {
            center: self.center,
            lengths: self.lengths,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub objects: Vec<ObjectRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<Detection>>,
    /// Precomputed detection-loss term for this scene, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f32>>>,
}

fn check_box(path: &str, center: &[f64; 3], lengths: &[f64; 3]) -> Result<()> {
    if center.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(format!("{path}.center"), "non-finite coordinate"));
    }
    if lengths.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(Error::validation(format!("{path}.lengths"), "lengths must be positive"));
    }
    Ok(())
}

fn check_feature(path: &str, f: &[f32]) -> Result<()> {
    if f.len() != FEATURE_DIM {
        return Err(Error::validation(
            format!("{path}.feature"),
            format!("expected {FEATURE_DIM} values, got {}", f.len()),
        ));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(format!("{path}.feature"), "non-finite value"));
    }
    Ok(())
}

fn check_class(path: &str, c: usize) -> Result<()> {
    if c >= NUM_CLASSES {
        return Err(Error::validation(
            format!("{path}.semantic_class"),
            format!("{c} outside 0..{NUM_CLASSES}"),
        ));
    }
    Ok(())
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            let path = format!("objects[{i}]");
            if !ids.insert(o.id) {
                return Err(Error::validation(format!("{path}.id"), format!("duplicate object id {}", o.id)));
            }
            check_box(&path, &o.center, &o.lengths)?;
            check_class(&path, o.semantic_class)?;
            check_feature(&path, &o.feature)?;
            if let Some(labels) = &o.orientation_labels {
                for (nb, &angle) in labels {
                    if !(0.0..180.0).contains(&angle) {
                        return Err(Error::validation(
                            format!("{path}.orientation_labels.{nb}"),
                            format!("angle {angle} outside [0, 180)"),
                        ));
                    }
                }
            }
        }
        if let Some(dets) = &self.detections {
            for (i, d) in dets.iter().enumerate() {
                let path = format!("detections[{i}]");
                check_box(&path, &d.center, &d.lengths)?;
                check_class(&path, d.semantic_class)?;
                check_feature(&path, &d.feature)?;
                if !(0.0..=1.0).contains(&d.objectness) {
                    return Err(Error::validation(format!("{path}.objectness"), "must lie in [0, 1]"));
                }
            }
        }
        if let Some(l) = self.detection_loss {
            if !l.is_finite() {
                return Err(Error::validation("detection_loss", "non-finite"));
            }
        }
        if let Some(points) = &self.points {
            for (i, p) in points.iter().enumerate() {
                if p.len() != POINT_WIDTH {
                    return Err(Error::validation(
                        format!("points[{i}]"),
                        format!("expected {POINT_WIDTH} values, got {}", p.len()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn object(&self, id: u64) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scene::from_json(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scene.to_json()).map_err(|e| Error::io(path, e))
}

/// Every `*.json` scene file in a directory, in file-name order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files.iter().map(load_scene).collect()
}

/// Where a proposal came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalSource {
    /// Ground-truth boxes and features stand in for detections.
    Oracle,
    Detected,
}

/// Up to [`MAX_PROPOSALS`] boxes with features and an objectness mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSet {
    pub boxes: Vec<Box3>,
    /// `[M × 128]`.
    pub features: Tensor,
    pub objectness: Vec<f64>,
    pub classes: Vec<usize>,
    pub mask: Vec<bool>,
    pub source: ProposalSource,
}

impl ProposalSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Ground-truth objects as proposals, all valid with objectness 1.
    pub fn oracle(scene: &Scene) -> Result<Self> {
        if scene.objects.is_empty() {
            return Err(Error::Argument(format!("scene {} has no objects", scene.scene_id)));
        }
        let objs = &scene.objects[..scene.objects.len().min(MAX_PROPOSALS)];
        let rows: Vec<Vec<f32>> = objs.iter().map(|o| o.feature.clone()).collect();
        Ok(ProposalSet {
            boxes: objs.iter().map(ObjectRecord::bbox).collect(),
            features: Tensor::from_rows(&rows)?,
            objectness: vec![1.0; objs.len()],
            classes: objs.iter().map(|o| o.semantic_class).collect(),
            mask: vec![true; objs.len()],
            source: ProposalSource::Oracle,
        })
    }

    /// Detections capped at the `max_proposals` most confident (ties by
    /// lower index, original order kept); valid iff objectness > threshold.
    pub fn from_detections(dets: &[Detection], max_proposals: usize, objectness_threshold: f64) -> Result<Option<Self>> {
        if dets.is_empty() {
            return Ok(None);
        }
        let cap = max_proposals.min(MAX_PROPOSALS);
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].objectness.total_cmp(&dets[a].objectness).then(a.cmp(&b)));
        order.truncate(cap);
        order.sort_unstable();
        let chosen: Vec<&Detection> = order.iter().map(|&i| &dets[i]).collect();
        let rows: Vec<Vec<f32>> = chosen.iter().map(|d| d.feature.clone()).collect();
        Ok(Some(ProposalSet {
            boxes: chosen.iter().map(|d| d.bbox()).collect(),
            features: Tensor::from_rows(&rows)?,
            objectness: chosen.iter().map(|d| d.objectness).collect(),
            classes: chosen.iter().map(|d| d.semantic_class).collect(),
            mask: chosen.iter().map(|d| d.objectness > objectness_threshold).collect(),
            source: ProposalSource::Detected,
        }))
    }

    /// Keeps only the listed proposals, in the given order.
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let rows: Vec<Vec<f32>> = keep.iter().map(|&i| self.features.row(i).to_vec()).collect();
        Ok(ProposalSet {
            boxes: keep.iter().map(|&i| self.boxes[i]).collect(),
            features: Tensor::from_rows(&rows)?,
            objectness: keep.iter().map(|&i| self.objectness[i]).collect(),
            classes: keep.iter().map(|&i| self.classes[i]).collect(),
            mask: keep.iter().map(|&i| self.mask[i]).collect(),
            source: self.source,
        })
    }
}
