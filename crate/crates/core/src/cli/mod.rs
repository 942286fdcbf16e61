//! Command-line surface plus checkpoint and retrieval-index persistence.

mod checkpoint;
mod commands;
mod retrieval;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use commands::{
    caption_lines, cmd_build_index, cmd_caption, cmd_eval, cmd_retrieve, cmd_synth, cmd_train, predict,
    retrieval_predictions, scene_proposals, EvalSource, ObjectSelector, RunConfig, TrainSummary,
    DEFAULT_IOU_THRESHOLDS, DEFAULT_NMS_THRESHOLD, LOG_HEADER, MAP_IOU,
};
pub use retrieval::{retrieve_caption, retrieve_index, IndexEntry, RetrievalIndex};

use crate::capmetrics::save_predictions;
use crate::error::Result;
use crate::scenedata::load_dataset;
use crate::synth::SynthConfig;

#[derive(Debug, Parser)]
#[command(name = "densecap3d", version, about = "Dense captioning of 3D object proposals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint or a prediction file against a dataset.
    Eval(EvalArgs),
    /// Print captions for objects of one scene.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Object id, or "all".
        #[arg(long, default_value = "all")]
        object: ObjectSelector,
    },
    /// Caption by nearest training feature.
    Retrieve(RetrieveArgs),
    /// Build a retrieval index from a training split.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic relation-caption dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Vocabulary the dataset was prepared with; defaults to `<data>/vocab.txt` when present.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_IOU_THRESHOLDS)]
    pub iou: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
    pub nms_threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Query one object of this scene.
    #[arg(long, requires = "object")]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub object: Option<u64>,
    /// Caption every object of a dataset instead; writes predictions to `--out`.
    #[arg(long, conflicts_with = "scene", requires = "out")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub scenes: usize,
    #[arg(long, default_value_t = 5)]
    pub objects: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub world_seed: u64,
    #[arg(long)]
    pub detections: bool,
    #[arg(long, default_value = "train")]
    pub split: String,
}

/// Runs one command, returning what it prints on standard output.
pub fn run(cli: Cli) -> Result<Vec<String>> {
    match cli.command {
        Command::Train { config } => {
            let s = cmd_train(&config)?;
            let mut lines = vec![format!("iterations {}", s.iterations)];
            if let (Some(a), Some(b)) = (s.first, s.last) {
                lines.push(format!("description loss {:.6} -> {:.6}", a.description, b.description));
            }
            Ok(lines)
        }
        Command::Eval(a) => {
            let source = match (&a.checkpoint, &a.predictions) {
                (Some(path), _) => EvalSource::Checkpoint {
                    path,
                    vocab: a.vocab.as_deref(),
                },
                (None, Some(p)) => EvalSource::Predictions(p),
                (None, None) => unreachable!("clap requires one source"),
            };
            let report = cmd_eval(source, &a.data, &a.iou, a.nms_threshold, a.out.as_deref())?;
            let mut lines: Vec<String> = report.metrics.iter().map(|(k, v)| format!("{k}\t{v:.6}")).collect();
            lines.push(format!("mAP@{}IoU\t{:.6}", report.map_iou, report.map));
            Ok(lines)
        }
        Command::Caption {
            checkpoint,
            scene,
            object,
        } => cmd_caption(&checkpoint, &scene, object),
        Command::Retrieve(a) => match (a.scene, a.object, a.data, a.out) {
            (Some(scene), Some(object), _, _) => Ok(vec![cmd_retrieve(&a.index, &scene, object)?]),
            (None, _, Some(data), Some(out)) => {
                let index = RetrievalIndex::load(&a.index)?;
                let preds = retrieval_predictions(&index, &load_dataset(&data)?)?;
                save_predictions(&preds, &out)?;
                Ok(vec![format!("{} predictions", preds.len())])
            }
            _ => Err(crate::Error::Argument(
                "retrieve needs --scene with --object, or --data with --out".into(),
            )),
        },
        Command::Index { data, out } => Ok(vec![format!("{} entries", cmd_build_index(&data, &out)?)]),
        Command::Synth(a) => {
            let cfg = SynthConfig {
                scenes: a.scenes,
                objects_per_scene: a.objects,
                classes: a.classes,
                seed: a.seed,
                world_seed: a.world_seed,
                detections: a.detections,
                split: a.split,
                ..Default::default()
            };
            Ok(vec![format!("{} scenes", cmd_synth(&cfg, &a.out)?)])
        }
    }
}
