//! Loss assembly and the per-scene optimization loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::captioner::teacher_forced_loss;
use crate::diffcore::{adam_step_store, AdamState, Bound, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{box_iou, orientation_bin, Box3, ORIENTATION_BINS};
use crate::model::Model;
use crate::relgraph::orientation_logits;
use crate::scenedata::{augment_scene, ProposalSet, ProposalSource, Scene, TokenSequence, Vocabulary, MAX_PROPOSALS};

/// IoU a detection needs with a ground-truth box to inherit its labels.
pub const LABEL_IOU: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Detection term.
    pub alpha: f64,
    /// Orientation term.
    pub beta: f64,
    /// Description term.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 10.0,
            beta: 1.0,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::validation(format!("loss_weights.{name}"), "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Optimizer steps (one per scene visit).
    pub max_iterations: usize,
    pub seed: u64,
    pub augment: bool,
    pub max_proposals: usize,
    /// Train on detections when a scene has them instead of ground-truth boxes.
    pub use_detections: bool,
    pub objectness_threshold: f64,
    pub loss_weights: LossWeights,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 1e-3,
            weight_decay: 1e-5,
            max_iterations: 5000,
            seed: 0,
            augment: true,
            max_proposals: MAX_PROPOSALS,
            use_detections: false,
            objectness_threshold: 0.5,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation("training.lr", "must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation("training.weight_decay", "must be non-negative"));
        }
        if self.max_proposals == 0 || self.max_proposals > MAX_PROPOSALS {
            return Err(Error::validation(
                "training.max_proposals",
                format!("must lie in 1..={MAX_PROPOSALS}"),
            ));
        }
        if !(0.0..=1.0).contains(&self.objectness_threshold) {
            return Err(Error::validation("training.objectness_threshold", "must lie in [0, 1]"));
        }
        self.loss_weights.validate()
    }
}

/// Mean cross-entropy over unmasked rows of `[E × 6]` logits; a constant 0
/// when every row is masked.
pub fn orientation_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
    if labels.len() != mask.len() || tape.shape(logits)[0] != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows, {} labels, {} mask entries",
            tape.shape(logits)[0],
            labels.len(),
            mask.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= ORIENTATION_BINS) {
        return Err(Error::Argument(format!("orientation label {bad} outside 0..{ORIENTATION_BINS}")));
    }
    let targets: Vec<Option<usize>> = labels.iter().zip(mask).map(|(&l, &m)| m.then_some(l)).collect();
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return tape.constant_raw(vec![1], vec![T::zero()]);
    }
    let sum = tape.cross_entropy_sum(logits, &targets)?;
    tape.scale(sum, 1.0 / n as f64)
}

pub fn combined_loss(l_det: f64, l_ad: f64, l_des: f64, w: &LossWeights) -> f64 {
    w.alpha * l_det + w.beta * l_ad + w.gamma * l_des
}

/// Valid proposal with the largest IoU against `gt`; ties go to the lower index.
pub fn select_training_proposal(proposals: &ProposalSet, gt: &Box3) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in proposals.valid_indices() {
        let iou = box_iou(&proposals.boxes[i], gt);
        if best.is_none_or(|(_, b)| iou > b) {
            best = Some((i, iou));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Selection("no valid proposals".into()))
}

/// Ground-truth object each proposal stands for, if any.
pub fn proposal_objects(scene: &Scene, proposals: &ProposalSet) -> Vec<Option<usize>> {
    match proposals.source {
        ProposalSource::Oracle => (0..proposals.len()).map(Some).collect(),
        ProposalSource::Detected => proposals
            .boxes
            .iter()
            .map(|b| {
                let mut best: Option<(usize, f64)> = None;
                for (j, o) in scene.objects.iter().enumerate() {
                    let iou = box_iou(b, &o.bbox());
                    if iou >= LABEL_IOU && best.is_none_or(|(_, v)| iou > v) {
                        best = Some((j, iou));
                    }
                }
                best.map(|(j, _)| j)
            })
            .collect(),
    }
}

/// Orientation bin per edge, `None` where either endpoint is masked or the
/// pair has no label. Masked objects' labels are never looked at.
pub fn edge_orientation_labels(scene: &Scene, owners: &[Option<usize>], edges: &[(usize, usize)]) -> Result<Vec<Option<usize>>> {
    edges
        .iter()
        .map(|&(a, b)| {
            let (Some(oa), Some(ob)) = (owners[a], owners[b]) else {
                return Ok(None);
            };
            let (src, dst) = (&scene.objects[oa], &scene.objects[ob]);
            if oa == ob || src.orientation_masked || dst.orientation_masked {
                return Ok(None);
            }
            match src.orientation_labels.as_ref().and_then(|m| m.get(&dst.id)) {
                Some(&angle) => orientation_bin(angle).map(Some),
                None => Ok(None),
            }
        })
        .collect()
}

/// Loss terms for one scene, built on a fresh tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub total: f64,
    pub detection: f64,
    pub orientation: f64,
    pub description: f64,
    pub tokens: usize,
    pub correct_tokens: usize,
    pub orientation_edges: usize,
}

impl StepStats {
    pub fn token_accuracy(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.correct_tokens as f64 / self.tokens as f64
        }
    }
}

/// Proposals used for training on a scene.
pub fn training_proposals(scene: &Scene, cfg: &TrainingConfig) -> Result<ProposalSet> {
    if cfg.use_detections {
        if let Some(dets) = &scene.detections {
            if let Some(p) = ProposalSet::from_detections(dets, cfg.max_proposals, cfg.objectness_threshold)? {
                return Ok(p);
            }
        }
    }
    let mut p = ProposalSet::oracle(scene)?;
    if p.len() > cfg.max_proposals {
        p = p.subset(&(0..cfg.max_proposals).collect::<Vec<_>>())?;
    }
    Ok(p)
}

/// Forward pass of the full objective. `captions` picks one caption per
/// annotated object (objects without captions are skipped).
pub fn scene_loss<T: Real>(
    model: &Model,
    tape: &mut Tape<T>,
    p: &Bound,
    scene: &Scene,
    cfg: &TrainingConfig,
    vocab: &Vocabulary,
    caption_choice: &mut dyn FnMut(usize) -> usize,
) -> Result<(Var, StepStats)> {
    let proposals = training_proposals(scene, cfg)?;
    let enc = model.encode(tape, p, &proposals)?;
    let mut stats = StepStats {
        detection: scene.detection_loss.unwrap_or(0.0),
        ..Default::default()
    };

    let mut targets = Vec::new();
    let mut gts: Vec<TokenSequence> = Vec::new();
    for obj in scene.objects.iter().filter(|o| !o.captions.is_empty()) {
        let k = match select_training_proposal(&proposals, &obj.bbox()) {
            Ok(k) => k,
            Err(Error::Selection(_)) => continue,
            Err(e) => return Err(e),
        };
        targets.push(k);
        let c = caption_choice(obj.captions.len());
        gts.push(vocab.encode(&obj.captions[c]));
    }
    let description = if targets.is_empty() {
        None
    } else {
        let batch = model.target_batch(tape, p, &enc, &targets)?;
        let tf = teacher_forced_loss(tape, p, &model.captioner, &model.config.decoder_options(), &batch, &gts)?;
        stats.tokens = tf.tokens;
        stats.correct_tokens = tf.correct;
        stats.description = tape.scalar_value(tf.loss).as_f64();
        Some(tf.loss)
    };

    let orientation = match enc.relations {
        Some(rel) => {
            let owners = proposal_objects(scene, &proposals);
            let labels = edge_orientation_labels(scene, &owners, &enc.graph.edges)?;
            let mask: Vec<bool> = labels.iter().map(Option::is_some).collect();
            stats.orientation_edges = mask.iter().filter(|&&m| m).count();
            let flat: Vec<usize> = labels.iter().map(|l| l.unwrap_or(0)).collect();
            let logits = orientation_logits(tape, p, &model.graph, rel)?;
            let l = orientation_loss(tape, logits, &flat, &mask)?;
            stats.orientation = tape.scalar_value(l).as_f64();
            Some(l)
        }
        None => None,
    };

    let w = &cfg.loss_weights;
    let det = tape.constant_raw(vec![1], vec![T::of_f64(stats.detection)])?;
    let mut total = tape.scale(det, w.alpha)?;
    if let Some(l) = orientation {
        let s = tape.scale(l, w.beta)?;
        total = tape.add(total, s)?;
    }
    if let Some(l) = description {
        let s = tape.scale(l, w.gamma)?;
        total = tape.add(total, s)?;
    }
    stats.total = tape.scalar_value(total).as_f64();
    Ok((total, stats))
}

/// Teacher-forced `(tokens, correct)` over every annotated object of
/// `scenes`, scoring each object's first reference caption without
/// augmentation.
pub fn teacher_forced_accuracy(model: &Model, scenes: &[Scene], cfg: &TrainingConfig, vocab: &Vocabulary) -> Result<(usize, usize)> {
    let mut tokens = 0;
    let mut correct = 0;
    for scene in scenes {
        let mut tape = Tape::<f32>::new();
        let p = model.store.bind(&mut tape);
        let (_, stats) = scene_loss(model, &mut tape, &p, scene, cfg, vocab, &mut |_| 0)?;
        tokens += stats.tokens;
        correct += stats.correct_tokens;
    }
    Ok((tokens, correct))
}

/// Optimizer plus the generator driving augmentation, caption choice and
/// scene order.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainingConfig,
    pub optimizer: AdamState,
    pub iteration: usize,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpochStats {
    pub steps: usize,
    pub total: f64,
    pub detection: f64,
    pub orientation: f64,
    pub description: f64,
    pub token_accuracy: f64,
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            config,
            optimizer: AdamState::new(),
            iteration: 0,
            rng,
        })
    }

    /// One optimizer step on one scene.
    pub fn step(&mut self, model: &mut Model, scene: &Scene, vocab: &Vocabulary) -> Result<StepStats> {
        let aug_seed: u64 = self.rng.gen();
        let scene = if self.config.augment {
            std::borrow::Cow::Owned(augment_scene(scene, aug_seed))
        } else {
            std::borrow::Cow::Borrowed(scene)
        };
        let mut tape = Tape::<f32>::new();
        let p = model.store.bind(&mut tape);
        let rng = &mut self.rng;
        let mut choose = |n: usize| rng.gen_range(0..n);
        let (loss, stats) = scene_loss(model, &mut tape, &p, &scene, &self.config, vocab, &mut choose)?;
        let grads = tape.backward(loss)?;
        let g = model.store.collect_grads(&p, &grads);
        adam_step_store(&mut model.store, &g, &mut self.optimizer, self.config.lr as f32, self.config.weight_decay as f32)?;
        self.iteration += 1;
        Ok(stats)
    }

    /// One pass over the scenes in shuffled order, stopping early at the
    /// iteration budget.
    pub fn train_epoch(
        &mut self,
        model: &mut Model,
        scenes: &[Scene],
        vocab: &Vocabulary,
        mut on_step: impl FnMut(usize, &Scene, &StepStats),
    ) -> Result<EpochStats> {
        if scenes.is_empty() {
            return Err(Error::Argument("empty dataset".into()));
        }
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut self.rng);
        let mut out = EpochStats::default();
        let (mut tokens, mut correct) = (0, 0);
        for i in order {
            if self.iteration >= self.config.max_iterations {
                break;
            }
            let s = self.step(model, &scenes[i], vocab)?;
            on_step(self.iteration, &scenes[i], &s);
            out.steps += 1;
            out.total += s.total;
            out.detection += s.detection;
            out.orientation += s.orientation;
            out.description += s.description;
            tokens += s.tokens;
            correct += s.correct_tokens;
        }
        if out.steps > 0 {
            let n = out.steps as f64;
            out.total /= n;
            out.detection /= n;
            out.orientation /= n;
            out.description /= n;
        }
        out.token_accuracy = if tokens > 0 { correct as f64 / tokens as f64 } else { 0.0 };
        Ok(out)
    }

    /// Epochs until the iteration budget is spent.
    pub fn train(
        &mut self,
        model: &mut Model,
        scenes: &[Scene],
        vocab: &Vocabulary,
        mut on_step: impl FnMut(usize, &Scene, &StepStats),
    ) -> Result<Vec<EpochStats>> {
        let mut epochs = Vec::new();
        while self.iteration < self.config.max_iterations {
            epochs.push(self.train_epoch(model, scenes, vocab, &mut on_step)?);
        }
        Ok(epochs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use crate::model::ModelConfig;
    use crate::scenedata::Detection;
    use crate::synth::{generate_scenes, synth_embeddings, synth_vocabulary, SynthConfig};

    fn small_model(vocab: &Vocabulary) -> Model {
        let cfg = ModelConfig {
            hidden: 24,
            neighbors: 2,
            ..Default::default()
        };
        Model::new(cfg, &synth_embeddings(vocab, 0)).unwrap()
    }

    fn scenes(n: usize) -> Vec<Scene> {
        generate_scenes(&SynthConfig {
            scenes: n,
            masked_fraction: 0.3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn orientation_loss_cases() {
        let mut tape = Tape::<f64>::new();
        let uniform = tape.constant(&Tensor::zeros(&[3, 6]));
        let none = orientation_loss(&mut tape, uniform, &[0, 1, 2], &[false; 3]).unwrap();
        assert_eq!(tape.scalar_value(none), 0.0);
        let l = orientation_loss(&mut tape, uniform, &[0, 4, 5], &[true, false, true]).unwrap();
        assert!((tape.scalar_value(l) - 6f64.ln()).abs() < 1e-12);
        let mut sharp = vec![0.0; 6];
        sharp[2] = 60.0;
        let sharp = tape.constant(&Tensor::matrix(1, 6, sharp).unwrap());
        let l = orientation_loss(&mut tape, sharp, &[2], &[true]).unwrap();
        assert!(tape.scalar_value(l) < 1e-20);
        assert!(matches!(orientation_loss(&mut tape, sharp, &[6], &[true]), Err(Error::Argument(_))));
    }

    #[test]
    fn combined_loss_weights() {
        let w = LossWeights::default();
        assert!((combined_loss(1.0, 1.0, 1.0, &w) - 11.1).abs() < 1e-12);
        assert_eq!(combined_loss(0.0, 0.0, 3.0, &w), 0.1 * 3.0);
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        assert_eq!(combined_loss(5.0, 2.0, 7.0, &zero), 0.0);
    }

    #[test]
    fn proposal_selection() {
        let s = &scenes(1)[0];
        let oracle = ProposalSet::oracle(s).unwrap();
        for (i, o) in s.objects.iter().enumerate() {
            assert_eq!(select_training_proposal(&oracle, &o.bbox()).unwrap(), i);
        }
        let gt = Box3::new([0.0; 3], [1.0; 3]).unwrap();
        let dup = Detection {
            center: [0.2, 0.0, 0.0],
            lengths: [1.0; 3],
            semantic_class: 0,
            feature: vec![0.0; crate::scenedata::FEATURE_DIM],
            objectness: 0.9,
        };
        let far = Detection {
            center: [9.0, 0.0, 0.0],
            ..dup.clone()
        };
        let mirrored = Detection {
            center: [-0.2, 0.0, 0.0],
            ..dup.clone()
        };
        let p = ProposalSet::from_detections(&[far.clone(), dup.clone(), mirrored], 256, 0.5).unwrap().unwrap();
        assert_eq!(select_training_proposal(&p, &gt).unwrap(), 1);
        let masked = Detection {
            objectness: 0.1,
            ..dup
        };
        let p = ProposalSet::from_detections(&[masked], 256, 0.5).unwrap().unwrap();
        assert!(matches!(select_training_proposal(&p, &gt), Err(Error::Selection(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let vocab = synth_vocabulary();
        let data = scenes(3);
        let run = || {
            let mut model = small_model(&vocab);
            let mut t = Trainer::new(TrainingConfig {
                max_iterations: 7,
                seed: 5,
                ..Default::default()
            })
            .unwrap();
            t.train(&mut model, &data, &vocab, |_, _, _| {}).unwrap();
            model.store
        };
        let a = run();
        let b = run();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.tensor), bits(&y.tensor), "{}", x.name);
        }
    }

    #[test]
    fn single_scene_description_loss_decreases() {
        let vocab = synth_vocabulary();
        let data = scenes(1);
        let mut model = small_model(&vocab);
        let mut t = Trainer::new(TrainingConfig {
            max_iterations: 50,
            augment: false,
            ..Default::default()
        })
        .unwrap();
        let mut losses = Vec::new();
        t.train(&mut model, &data, &vocab, |_, _, s| losses.push(s.description)).unwrap();
        assert_eq!(losses.len(), 50);
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let vocab = synth_vocabulary();
        let data = scenes(2);
        let mut model = small_model(&vocab);
        let before = model.store.clone();
        let mut t = Trainer::new(TrainingConfig {
            max_iterations: 3,
            augment: false,
            weight_decay: 0.0,
            loss_weights: LossWeights {
                alpha: 10.0,
                beta: 0.0,
                gamma: 0.0,
            },
            ..Default::default()
        })
        .unwrap();
        t.train(&mut model, &data, &vocab, |_, _, _| {}).unwrap();
        assert_eq!(model.store, before);
    }

    #[test]
    fn masked_labels_are_never_read() {
        let vocab = synth_vocabulary();
        let clean = scenes(1).remove(0);
        assert!(clean.objects.iter().any(|o| o.orientation_masked));
        let mut poisoned = clean.clone();
        for o in poisoned.objects.iter_mut().filter(|o| o.orientation_masked) {
            for v in o.orientation_labels.as_mut().unwrap().values_mut() {
                *v = 179.0 - *v;
            }
            o.orientation_labels.as_mut().unwrap().insert(999, 1.0);
        }
        let model = small_model(&vocab);
        let cfg = TrainingConfig {
            augment: false,
            ..Default::default()
        };
        let loss = |scene: &Scene| {
            let mut tape = Tape::<f32>::new();
            let p = model.store.bind(&mut tape);
            let (_, stats) = scene_loss(&model, &mut tape, &p, scene, &cfg, &vocab, &mut |_| 0).unwrap();
            stats
        };
        let a = loss(&clean);
        assert!(a.orientation_edges > 0);
        assert_eq!(a, loss(&poisoned));
    }

    #[test]
    fn config_validation() {
        let bad = TrainingConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Validation { .. })));
        let bad = TrainingConfig {
            max_proposals: 257,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
