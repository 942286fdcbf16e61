use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, Box3};
use crate::scenedata::{tokenize, Scene};

use super::cider::CiderCorpus;
use super::sentence::{bleu4, meteor, rouge_l};

/// One predicted box with its caption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scene_id: String,
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub class: usize,
    pub objectness: f64,
    pub caption: String,
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let preds: Vec<Prediction> =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for (i, p) in preds.iter().enumerate() {
        p.bbox
            .validate()
            .map_err(|e| Error::validation(format!("[{i}].box"), e.to_string()))?;
    }
    Ok(preds)
}

pub fn save_predictions(preds: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(preds).expect("predictions serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Best prediction for one ground-truth box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub prediction: Option<usize>,
    pub iou: f64,
}

/// Each ground-truth box takes the prediction with the highest IoU (ties to
/// the lower index). Predictions may be shared.
pub fn assign_predictions(preds: &[Box3], gts: &[Box3]) -> Vec<Assignment> {
    gts.iter()
        .map(|g| {
            let mut best = Assignment {
                prediction: None,
                iou: 0.0,
            };
            for (i, p) in preds.iter().enumerate() {
                let iou = box_iou(p, g);
                if best.prediction.is_none() || iou > best.iou {
                    best = Assignment {
                        prediction: Some(i),
                        iou,
                    };
                }
            }
            best
        })
        .collect()
}

/// `(1/N) Σ m_i · [iou_i > k]`.
pub fn m_at_kiou(scores: &[f64], ious: &[f64], k: f64) -> Result<f64> {
    if scores.len() != ious.len() {
        return Err(Error::Dimension(format!("{} scores for {} IoUs", scores.len(), ious.len())));
    }
    if scores.is_empty() {
        return Err(Error::Argument("m@kIoU over zero objects".into()));
    }
    let sum: f64 = scores.iter().zip(ious).filter(|(_, &u)| u > k).map(|(&m, _)| m).sum();
    Ok(sum / scores.len() as f64)
}

/// Detection for mAP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub bbox: Box3,
    pub class: usize,
    pub score: f64,
}

/// Ground-truth box with its class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassBox {
    pub bbox: Box3,
    pub class: usize,
}

/// All-point interpolated AP. Every true positive adds `1/num_gt` recall at
/// the best precision reached at or after its rank.
fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let precision: Vec<f64> = hits
        .iter()
        .enumerate()
        .map(|(rank, &h)| {
            tp += usize::from(h);
            tp as f64 / (rank + 1) as f64
        })
        .collect();
    let mut best_after = vec![0.0; hits.len() + 1];
    for i in (0..hits.len()).rev() {
        best_after[i] = precision[i].max(best_after[i + 1]);
    }
    let sum: f64 = (0..hits.len()).filter(|&i| hits[i]).map(|i| best_after[i]).sum();
    sum / num_gt as f64
}

/// Mean over ground-truth classes of AP, with predictions ranked by score
/// and greedily matched within their own scene to the best unmatched
/// same-class box with IoU above `threshold`.
pub fn map_at_iou_scenes(scenes: &[(Vec<ScoredBox>, Vec<ClassBox>)], threshold: f64) -> f64 {
    let classes: BTreeSet<usize> = scenes.iter().flat_map(|(_, g)| g.iter().map(|b| b.class)).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &c in &classes {
        // (score, scene, index) in rank order.
        let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
        for (s, (preds, _)) in scenes.iter().enumerate() {
            for (i, p) in preds.iter().enumerate() {
                if p.class == c {
                    ranked.push((p.score, s, i));
                }
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut matched: Vec<Vec<bool>> = scenes.iter().map(|(_, g)| vec![false; g.len()]).collect();
        let num_gt = scenes.iter().map(|(_, g)| g.iter().filter(|b| b.class == c).count()).sum();
        let hits: Vec<bool> = ranked
            .iter()
            .map(|&(_, s, i)| {
                let p = &scenes[s].0[i];
                let mut best: Option<(usize, f64)> = None;
                for (j, g) in scenes[s].1.iter().enumerate() {
                    if g.class != c || matched[s][j] {
                        continue;
                    }
                    let iou = box_iou(&p.bbox, &g.bbox);
                    if iou > threshold && best.is_none_or(|(_, b)| iou > b) {
                        best = Some((j, iou));
                    }
                }
                match best {
                    Some((j, _)) => {
                        matched[s][j] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        total += average_precision(&hits, num_gt);
    }
    total / classes.len() as f64
}

pub fn map_at_iou(preds: &[ScoredBox], gts: &[ClassBox], threshold: f64) -> f64 {
    map_at_iou_scenes(&[(preds.to_vec(), gts.to_vec())], threshold)
}

pub const METRIC_NAMES: [&str; 4] = ["CIDEr", "BLEU-4", "METEOR", "ROUGE-L"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionScores {
    #[serde(rename = "CIDEr")]
    pub cider: f64,
    #[serde(rename = "BLEU-4")]
    pub bleu4: f64,
    #[serde(rename = "METEOR")]
    pub meteor: f64,
    #[serde(rename = "ROUGE-L")]
    pub rouge_l: f64,
}

impl CaptionScores {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "CIDEr" => Some(self.cider),
            "BLEU-4" => Some(self.bleu4),
            "METEOR" => Some(self.meteor),
            "ROUGE-L" => Some(self.rouge_l),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecordReport {
    pub scene_id: String,
    pub object_id: u64,
    /// Index into the scene's predictions.
    pub prediction: Option<usize>,
    pub iou: f64,
    pub caption: String,
    pub scores: CaptionScores,
    /// Gate per IoU threshold, keyed by the threshold as written in the column names.
    pub gates: BTreeMap<String, u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_objects: usize,
    pub iou_thresholds: Vec<f64>,
    /// `"<metric>@<k>IoU"` columns, e.g. `"CIDEr@0.5IoU"`, plus `"mAP@<map_iou>IoU"`.
    pub metrics: BTreeMap<String, f64>,
    pub map_iou: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub objects: Vec<ObjectRecordReport>,
}

pub fn column(metric: &str, k: f64) -> String {
    format!("{metric}@{k}IoU")
}

impl EvalReport {
    pub fn metric(&self, metric: &str, k: f64) -> Option<f64> {
        self.metrics.get(&column(metric, k)).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn group_by_scene<'a>(preds: &'a [Prediction], scenes: &[Scene]) -> Result<Vec<Vec<&'a Prediction>>> {
    let index: BTreeMap<&str, usize> = scenes.iter().enumerate().map(|(i, s)| (s.scene_id.as_str(), i)).collect();
    if index.len() != scenes.len() {
        return Err(Error::Argument("duplicate scene ids in dataset".into()));
    }
    let mut out = vec![Vec::new(); scenes.len()];
    for p in preds {
        match index.get(p.scene_id.as_str()) {
            Some(&i) => out[i].push(p),
            None => return Err(Error::Argument(format!("prediction for unknown scene {}", p.scene_id))),
        }
    }
    Ok(out)
}

/// Scores predictions against every ground-truth object of `scenes`. Each
/// object is captioned by its best-IoU prediction; objects without
/// reference captions are skipped.
pub fn evaluate(preds: &[Prediction], scenes: &[Scene], ks: &[f64], map_iou: f64) -> Result<EvalReport> {
    if ks.is_empty() {
        return Err(Error::Argument("no IoU thresholds".into()));
    }
    let grouped = group_by_scene(preds, scenes)?;

    struct Row {
        scene_id: String,
        object_id: u64,
        prediction: Option<usize>,
        iou: f64,
        caption: String,
        cand: Vec<String>,
        refs: Vec<Vec<String>>,
    }
    let per_scene: Vec<Vec<Row>> = scenes
        .par_iter()
        .zip(grouped.par_iter())
        .map(|(scene, sp)| {
            let boxes: Vec<Box3> = sp.iter().map(|p| p.bbox).collect();
            let annotated: Vec<_> = scene.objects.iter().filter(|o| !o.captions.is_empty()).collect();
            let gts: Vec<Box3> = annotated.iter().map(|o| o.bbox()).collect();
            assign_predictions(&boxes, &gts)
                .into_iter()
                .zip(annotated)
                .map(|(a, o)| {
                    let caption = a.prediction.map(|i| sp[i].caption.clone()).unwrap_or_default();
                    Row {
                        scene_id: scene.scene_id.clone(),
                        object_id: o.id,
                        prediction: a.prediction,
                        iou: a.iou,
                        cand: tokenize(&caption),
                        caption,
                        refs: o.captions.iter().map(|c| tokenize(c)).collect(),
                    }
                })
                .collect()
        })
        .collect();
    let rows: Vec<Row> = per_scene.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::Argument("no annotated objects to evaluate".into()));
    }

    let refs: Vec<Vec<Vec<String>>> = rows.iter().map(|r| r.refs.clone()).collect();
    let corpus = CiderCorpus::new(&refs);
    let scores: Vec<CaptionScores> = rows
        .par_iter()
        .map(|r| CaptionScores {
            cider: corpus.score(&r.cand, &r.refs),
            bleu4: bleu4(&r.cand, &r.refs),
            meteor: meteor(&r.cand, &r.refs),
            rouge_l: rouge_l(&r.cand, &r.refs),
        })
        .collect();

    let ious: Vec<f64> = rows.iter().map(|r| r.iou).collect();
    let mut metrics = BTreeMap::new();
    for &k in ks {
        for m in METRIC_NAMES {
            let s: Vec<f64> = scores.iter().map(|s| s.get(m).unwrap()).collect();
            metrics.insert(column(m, k), m_at_kiou(&s, &ious, k)?);
        }
    }

    let det_scenes: Vec<(Vec<ScoredBox>, Vec<ClassBox>)> = scenes
        .iter()
        .zip(&grouped)
        .map(|(s, sp)| {
            let p = sp
                .iter()
                .map(|p| ScoredBox {
                    bbox: p.bbox,
                    class: p.class,
                    score: p.objectness,
                })
                .collect();
            let g = s
                .objects
                .iter()
                .map(|o| ClassBox {
                    bbox: o.bbox(),
                    class: o.semantic_class,
                })
                .collect();
            (p, g)
        })
        .collect();
    let map = map_at_iou_scenes(&det_scenes, map_iou);
    metrics.insert(column("mAP", map_iou), map);

    let objects = rows
        .into_iter()
        .zip(scores)
        .map(|(r, s)| ObjectRecordReport {
            gates: ks.iter().map(|&k| (k.to_string(), u8::from(r.iou > k))).collect(),
            scene_id: r.scene_id,
            object_id: r.object_id,
            prediction: r.prediction,
            iou: r.iou,
            caption: r.caption,
            scores: s,
        })
        .collect::<Vec<_>>();
    Ok(EvalReport {
        num_objects: objects.len(),
        iou_thresholds: ks.to_vec(),
        metrics,
        map_iou,
        map,
        objects,
    })
}
