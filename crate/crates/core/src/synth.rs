//! Synthetic scenes whose captions name each object and its nearest neighbor.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scenedata::{
    build_vocabulary, Detection, EmbeddingTable, ObjectRecord, Scene, Vocabulary, EMBEDDING_DIM, FEATURE_DIM,
    NUM_CLASSES, RESERVED,
};

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "cabinet", "bed", "chair", "sofa", "table", "door", "window", "bookshelf", "picture", "counter", "desk",
    "curtain", "refrigerator", "toilet", "sink", "bathtub", "lamp", "dresser",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scenes: usize,
    pub objects_per_scene: usize,
    /// Number of classes used, taken from the front of [`CLASS_NAMES`].
    pub classes: usize,
    /// Seed for scene layout.
    pub seed: u64,
    /// Seed for class prototypes and word vectors; share it between splits.
    pub world_seed: u64,
    /// Half-width of the square room (m).
    pub room_half_extent: f64,
    pub feature_noise: f32,
    pub masked_fraction: f64,
    pub detections: bool,
    /// Prefix for scene ids.
    pub split: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 20,
            objects_per_scene: 5,
            classes: 8,
            seed: 0,
            world_seed: 0,
            room_half_extent: 3.0,
            feature_noise: 0.05,
            masked_fraction: 0.2,
            detections: false,
            split: "train".into(),
        }
    }
}

const MIN_SEPARATION: f64 = 1.0;
const NEIGHBOR_GAP: f64 = 0.3;

fn class_prototypes(cfg: &SynthConfig) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.world_seed ^ 0x5eed_0001);
    (0..NUM_CLASSES)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect()
}

fn class_lengths(class: usize) -> [f64; 3] {
    let base = 0.4 + 0.1 * (class % 5) as f64;
    [base, base + 0.05 * (class % 3) as f64, 0.5 + 0.1 * (class % 4) as f64]
}

pub fn caption_for(class: usize, neighbor_class: usize) -> String {
    format!("the {} is next to the {}", CLASS_NAMES[class], CLASS_NAMES[neighbor_class])
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..2).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Positions with a clear nearest neighbor for every object.
fn layout(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Option<Vec<[f64; 3]>> {
    'attempt: for _ in 0..1000 {
        let mut pts: Vec<[f64; 3]> = Vec::with_capacity(n);
        while pts.len() < n {
            let mut placed = false;
            for _ in 0..200 {
                let p = [rng.gen_range(-half..half), rng.gen_range(-half..half), 0.0];
                if pts.iter().all(|&q| dist2(p, q) >= MIN_SEPARATION * MIN_SEPARATION) {
                    pts.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        if n > 2 {
            for i in 0..n {
                let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist2(pts[i], pts[j]).sqrt()).collect();
                d.sort_by(f64::total_cmp);
                if d[1] - d[0] < NEIGHBOR_GAP {
                    continue 'attempt;
                }
            }
        }
        return Some(pts);
    }
    None
}

fn nearest(pts: &[[f64; 3]], i: usize) -> usize {
    (0..pts.len())
        .filter(|&j| j != i)
        .min_by(|&a, &b| dist2(pts[i], pts[a]).total_cmp(&dist2(pts[i], pts[b])))
        .unwrap()
}

pub fn generate_scenes(cfg: &SynthConfig) -> Result<Vec<Scene>> {
    if cfg.classes == 0 || cfg.classes > NUM_CLASSES {
        return Err(Error::validation("synth.classes", format!("must lie in 1..={NUM_CLASSES}")));
    }
    if cfg.objects_per_scene < 2 {
        return Err(Error::validation("synth.objects_per_scene", "needs at least 2 objects"));
    }
    let protos = class_prototypes(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scenes = Vec::with_capacity(cfg.scenes);
    for s in 0..cfg.scenes {
        let n = cfg.objects_per_scene;
        let pts = layout(&mut rng, n, cfg.room_half_extent)
            .ok_or_else(|| Error::Argument("room too small for the requested objects".into()))?;
        let classes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.classes)).collect();
        let yaws: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..360.0)).collect();
        let mut objects = Vec::with_capacity(n);
        for i in 0..n {
            let c = classes[i];
            let lengths = class_lengths(c);
            let mut feature: Vec<f32> = protos[c]
                .iter()
                .map(|&v| v + rng.gen_range(-1.0f32..1.0) * cfg.feature_noise)
                .collect();
            let yaw = yaws[i].to_radians();
            feature[0] = (2.0 * yaw).cos() as f32;
            feature[1] = (2.0 * yaw).sin() as f32;
            let labels: BTreeMap<u64, f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j as u64, (yaws[i] - yaws[j]).rem_euclid(180.0)))
                .collect();
            objects.push(ObjectRecord {
                id: i as u64,
                center: [pts[i][0], pts[i][1], lengths[2] / 2.0],
                lengths,
                semantic_class: c,
                feature,
                captions: vec![caption_for(c, classes[nearest(&pts, i)])],
                orientation_labels: Some(labels),
                orientation_masked: rng.gen_bool(cfg.masked_fraction.clamp(0.0, 1.0)),
            });
        }
        let detections = cfg.detections.then(|| synth_detections(&objects, &mut rng, cfg.room_half_extent));
        scenes.push(Scene {
            scene_id: format!("{}{:04}_00", cfg.split, s),
            objects,
            detections,
            detection_loss: None,
            points: None,
        });
    }
    Ok(scenes)
}

/// A jittered detection per object, a weaker duplicate of every other
/// object, and one low-confidence false positive.
fn synth_detections(objects: &[ObjectRecord], rng: &mut ChaCha8Rng, half: f64) -> Vec<Detection> {
    let mut dets = Vec::new();
    let jitter = |rng: &mut ChaCha8Rng, o: &ObjectRecord, amount: f64| Detection {
        center: [
            o.center[0] + rng.gen_range(-amount..amount),
            o.center[1] + rng.gen_range(-amount..amount),
            o.center[2],
        ],
        lengths: o.lengths.map(|l| l * rng.gen_range(0.95..1.05)),
        semantic_class: o.semantic_class,
        feature: o.feature.iter().map(|&v| v + rng.gen_range(-0.02f32..0.02)).collect(),
        objectness: rng.gen_range(0.75..1.0),
    };
    for (i, o) in objects.iter().enumerate() {
        dets.push(jitter(rng, o, 0.03));
        if i % 2 == 1 {
            let mut d = jitter(rng, o, 0.08);
            d.objectness = rng.gen_range(0.55..0.7);
            dets.push(d);
        }
    }
    dets.push(Detection {
        center: [rng.gen_range(-half..half), rng.gen_range(-half..half), 0.3],
        lengths: [0.3, 0.3, 0.6],
        semantic_class: 0,
        feature: (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        objectness: rng.gen_range(0.0..0.3),
    });
    dets
}

/// Vocabulary over every class name, so splits share one index.
pub fn synth_vocabulary() -> Vocabulary {
    let corpus: Vec<String> = (0..NUM_CLASSES).map(|c| caption_for(c, c)).collect();
    build_vocabulary(&corpus, 1)
}

/// Random word vectors for every non-reserved token, seeded by `world_seed`.
pub fn synth_embeddings(vocab: &Vocabulary, world_seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(world_seed ^ 0x5eed_0002);
    let mut data = vec![0.0f32; vocab.len() * EMBEDDING_DIM];
    for v in data[RESERVED.len() * EMBEDDING_DIM..].iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    EmbeddingTable {
        table: Tensor::matrix(vocab.len(), EMBEDDING_DIM, data).expect("finite"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_valid_and_seeded() {
        let cfg = SynthConfig {
            detections: true,
            ..Default::default()
        };
        let a = generate_scenes(&cfg).unwrap();
        assert_eq!(a.len(), 20);
        for s in &a {
            s.validate().unwrap();
            assert_eq!(s.objects.len(), 5);
        }
        assert_eq!(a, generate_scenes(&cfg).unwrap());
    }

    #[test]
    fn captions_name_the_nearest_neighbor() {
        let scenes = generate_scenes(&SynthConfig::default()).unwrap();
        let o = &scenes[0].objects;
        let pts: Vec<[f64; 3]> = o.iter().map(|x| x.center).collect();
        for i in 0..o.len() {
            let j = nearest(&pts, i);
            assert_eq!(o[i].captions[0], caption_for(o[i].semantic_class, o[j].semantic_class));
        }
    }

    #[test]
    fn vocabulary_covers_captions() {
        let v = synth_vocabulary();
        let scenes = generate_scenes(&SynthConfig {
            classes: NUM_CLASSES,
            ..Default::default()
        })
        .unwrap();
        for s in &scenes {
            for o in &s.objects {
                assert!(!v.encode(&o.captions[0]).0.contains(&crate::scenedata::UNK));
            }
        }
    }
}
