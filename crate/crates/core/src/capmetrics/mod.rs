//! Caption metrics, IoU-gated aggregation and detection mAP.

mod cider;
mod eval;
mod sentence;

pub use cider::{cider, CiderCorpus, CIDER_N, CIDER_SCALE, CIDER_SIGMA};
pub use eval::{
    assign_predictions, column, evaluate, load_predictions, m_at_kiou, map_at_iou, map_at_iou_scenes,
    save_predictions, Assignment, CaptionScores, ClassBox, EvalReport, ObjectRecordReport, Prediction, ScoredBox,
    METRIC_NAMES,
};
pub use sentence::{bleu4, meteor, rouge_l, ROUGE_BETA};
