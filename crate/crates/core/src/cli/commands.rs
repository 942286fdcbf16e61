use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capmetrics::{evaluate, EvalReport, Prediction};
use crate::error::{Error, Result};
use crate::geometry::nms;
use crate::model::{Model, ModelConfig};
use crate::scenedata::{
    load_dataset, load_embeddings, load_scene, save_embeddings, save_scene, ProposalSet, ProposalSource, Scene,
    Vocabulary, MAX_PROPOSALS,
};
use crate::synth::{generate_scenes, synth_embeddings, synth_vocabulary, SynthConfig};
use crate::training::{StepStats, Trainer, TrainingConfig};

use super::checkpoint::Checkpoint;
use super::retrieval::{retrieve_index, RetrievalIndex};

pub const DEFAULT_IOU_THRESHOLDS: [f64; 2] = [0.25, 0.5];
pub const MAP_IOU: f64 = 0.5;
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.25;

/// Training run description. Relative paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of scene JSON files.
    pub train_dir: PathBuf,
    pub vocab: PathBuf,
    pub embeddings: PathBuf,
    /// Checkpoint to write.
    pub checkpoint: PathBuf,
    /// Per-iteration loss CSV.
    #[serde(default)]
    pub log: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::validation("config", e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.train_dir, &mut cfg.vocab, &mut cfg.embeddings, &mut cfg.checkpoint] {
            *p = base.join(&*p);
        }
        if let Some(l) = cfg.log.as_mut() {
            *l = base.join(&*l);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub first: Option<StepStats>,
    pub last: Option<StepStats>,
}

pub const LOG_HEADER: &str = "iteration,scene_id,total,detection,orientation,description,token_accuracy";

pub fn cmd_train(config_path: impl AsRef<Path>) -> Result<TrainSummary> {
    let cfg = RunConfig::load(config_path)?;
    let scenes = load_dataset(&cfg.train_dir)?;
    let vocab = Vocabulary::load(&cfg.vocab)?;
    let embeddings = load_embeddings(&cfg.embeddings, &vocab)?;
    let mut model = Model::new(cfg.model.clone(), &embeddings)?;
    let mut trainer = Trainer::new(cfg.training.clone())?;

    let mut log = String::from(LOG_HEADER);
    log.push('\n');
    let mut first = None;
    let mut last = None;
    trainer.train(&mut model, &scenes, &vocab, |it, scene, s| {
        log.push_str(&format!(
            "{it},{},{},{},{},{},{}\n",
            scene.scene_id,
            s.total,
            s.detection,
            s.orientation,
            s.description,
            s.token_accuracy()
        ));
        if first.is_none() {
            first = Some(s.clone());
        }
        last = Some(s.clone());
    })?;
    Checkpoint::new(&model, &vocab, Some(&trainer.optimizer), trainer.iteration)?.save(&cfg.checkpoint)?;
    if let Some(path) = &cfg.log {
        fs::write(path, log).map_err(|e| Error::io(path, e))?;
    }
    Ok(TrainSummary {
        iterations: trainer.iteration,
        first,
        last,
    })
}

/// Proposals to caption in a scene: NMS-filtered detections when the scene
/// has a detection list, otherwise the ground-truth boxes.
pub fn scene_proposals(scene: &Scene, nms_threshold: f64, objectness_threshold: f64) -> Result<Option<(ProposalSet, Vec<usize>)>> {
    let proposals = match &scene.detections {
        Some(dets) => match ProposalSet::from_detections(dets, MAX_PROPOSALS, objectness_threshold)? {
            Some(p) => p,
            None => return Ok(None),
        },
        None => ProposalSet::oracle(scene)?,
    };
    let targets = match proposals.source {
        ProposalSource::Oracle => (0..proposals.len()).collect(),
        ProposalSource::Detected => {
            let valid = proposals.valid_indices();
            let boxes: Vec<_> = valid.iter().map(|&i| proposals.boxes[i]).collect();
            let scores: Vec<f64> = valid.iter().map(|&i| proposals.objectness[i]).collect();
            nms(&boxes, &scores, nms_threshold)?.into_iter().map(|k| valid[k]).collect()
        }
    };
    Ok(Some((proposals, targets)))
}

/// Captioned predictions for every scene, decoded in parallel.
pub fn predict(model: &Model, vocab: &Vocabulary, scenes: &[Scene], nms_threshold: f64) -> Result<Vec<Prediction>> {
    let per_scene = scenes
        .par_iter()
        .map(|scene| -> Result<Vec<Prediction>> {
            let Some((proposals, targets)) = scene_proposals(scene, nms_threshold, 0.5)? else {
                return Ok(Vec::new());
            };
            let captions = model.caption(&proposals, &targets)?;
            Ok(targets
                .iter()
                .zip(captions)
                .map(|(&k, seq)| Prediction {
                    scene_id: scene.scene_id.clone(),
                    bbox: proposals.boxes[k],
                    class: proposals.classes[k],
                    objectness: proposals.objectness[k],
                    caption: vocab.decode(&seq).join(" "),
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}

/// What `eval` scores.
pub enum EvalSource<'a> {
    Checkpoint { path: &'a Path, vocab: Option<&'a Path> },
    Predictions(&'a Path),
}

pub fn cmd_eval(source: EvalSource<'_>, data: &Path, ks: &[f64], nms_threshold: f64, out: Option<&Path>) -> Result<EvalReport> {
    let scenes = load_dataset(data)?;
    let preds = match source {
        EvalSource::Predictions(path) => crate::capmetrics::load_predictions(path)?,
        EvalSource::Checkpoint { path, vocab } => {
            let ckpt = Checkpoint::load(path)?;
            let data_vocab = match vocab {
                Some(v) => Some(Vocabulary::load(v)?),
                None => {
                    let default = data.join("vocab.txt");
                    default.is_file().then(|| Vocabulary::load(&default)).transpose()?
                }
            };
            if let Some(v) = data_vocab {
                if v != ckpt.vocab {
                    return Err(Error::Compatibility(format!(
                        "dataset vocabulary has {} tokens, checkpoint vocabulary has {} (or differs in order)",
                        v.len(),
                        ckpt.vocab.len()
                    )));
                }
            }
            let model = ckpt.to_model()?;
            predict(&model, &ckpt.vocab, &scenes, nms_threshold)?
        }
    };
    let report = evaluate(&preds, &scenes, ks, MAP_IOU)?;
    if let Some(out) = out {
        report.save(out)?;
    }
    Ok(report)
}

/// Which objects `caption` prints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectSelector {
    All,
    Id(u64),
}

impl std::str::FromStr for ObjectSelector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(ObjectSelector::All);
        }
        s.parse()
            .map(ObjectSelector::Id)
            .map_err(|_| Error::Argument(format!("object must be an id or \"all\", got {s:?}")))
    }
}

fn fmt3(v: [f64; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

/// One tab-separated line per object: id, center, lengths, caption.
pub fn caption_lines(ckpt: &Checkpoint, scene: &Scene, which: ObjectSelector) -> Result<Vec<String>> {
    let targets: Vec<usize> = match which {
        ObjectSelector::All => (0..scene.objects.len()).collect(),
        ObjectSelector::Id(id) => vec![scene
            .objects
            .iter()
            .position(|o| o.id == id)
            .ok_or_else(|| Error::Argument(format!("object {id} not in scene {}", scene.scene_id)))?],
    };
    let model = ckpt.to_model()?;
    let proposals = ProposalSet::oracle(scene)?;
    let captions = model.caption(&proposals, &targets)?;
    Ok(targets
        .iter()
        .zip(captions)
        .map(|(&i, seq)| {
            let o = &scene.objects[i];
            format!("{}\t{}\t{}\t{}", o.id, fmt3(o.center), fmt3(o.lengths), ckpt.vocab.decode(&seq).join(" "))
        })
        .collect())
}

pub fn cmd_caption(checkpoint: &Path, scene: &Path, which: ObjectSelector) -> Result<Vec<String>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let scene = load_scene(scene)?;
    caption_lines(&ckpt, &scene, which)
}

pub fn cmd_build_index(data: &Path, out: &Path) -> Result<usize> {
    let index = RetrievalIndex::from_scenes(&load_dataset(data)?);
    index.save(out)?;
    Ok(index.entries.len())
}

pub fn cmd_retrieve(index: &Path, scene: &Path, object: u64) -> Result<String> {
    let index = RetrievalIndex::load(index)?;
    let scene = load_scene(scene)?;
    let o = scene
        .object(object)
        .ok_or_else(|| Error::Argument(format!("object {object} not in scene {}", scene.scene_id)))?;
    Ok(index.entries[retrieve_index(&o.feature, &index)?].caption.clone())
}

/// Retrieval-baseline predictions: ground-truth boxes captioned by their
/// nearest training feature.
pub fn retrieval_predictions(index: &RetrievalIndex, scenes: &[Scene]) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for s in scenes {
        for o in &s.objects {
            out.push(Prediction {
                scene_id: s.scene_id.clone(),
                bbox: o.bbox(),
                class: o.semantic_class,
                objectness: 1.0,
                caption: index.entries[retrieve_index(&o.feature, index)?].caption.clone(),
            });
        }
    }
    Ok(out)
}

/// Writes `scenes/`, `vocab.txt`, `embeddings.txt` and a `config.json`
/// pointing at them under `out`.
pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<usize> {
    let scenes = generate_scenes(cfg)?;
    let dir = out.join("scenes");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for s in &scenes {
        save_scene(s, dir.join(format!("{}.json", s.scene_id)))?;
    }
    let vocab = synth_vocabulary();
    vocab.save(out.join("vocab.txt"))?;
    save_embeddings(&synth_embeddings(&vocab, cfg.world_seed), &vocab, out.join("embeddings.txt"))?;
    let run = RunConfig {
        train_dir: "scenes".into(),
        vocab: "vocab.txt".into(),
        embeddings: "embeddings.txt".into(),
        checkpoint: "model.ckpt".into(),
        log: Some("train_log.csv".into()),
        model: ModelConfig::default(),
        training: TrainingConfig::default(),
    };
    let path = out.join("config.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&run).expect("config serializes")).map_err(|e| Error::io(&path, e))?;
    Ok(scenes.len())
}
