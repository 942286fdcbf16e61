//! C ABI over densecap3d.
//!
//! Every function returns a [`Dc3dStatus`]; on failure the message is
//! available from [`dc3d_last_error`] on the same thread. Strings returned
//! through out-pointers are owned by the caller and released with
//! [`dc3d_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use densecap3d::capmetrics::{bleu4, evaluate, meteor, rouge_l, Prediction};
use densecap3d::cli::{caption_lines, predict, Checkpoint, ObjectSelector, DEFAULT_NMS_THRESHOLD, MAP_IOU};
use densecap3d::geometry::{box_iou, nms, Box3};
use densecap3d::model::Model;
use densecap3d::scenedata::{load_dataset, tokenize, Scene, Vocabulary};
use densecap3d::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dc3dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Argument = 4,
    NonFinite = 5,
    Format = 6,
    Validation = 7,
    Compatibility = 8,
    Selection = 9,
    Placement = 10,
    Visibility = 11,
    Io = 12,
    Panic = 13,
}

/// Axis-aligned box: center and full side lengths.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dc3dBox {
    pub center: [f64; 3],
    pub lengths: [f64; 3],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dc3dSentenceScores {
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
}

/// A trained model with its vocabulary.
pub struct Dc3dModel {
    checkpoint: Checkpoint,
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(Dc3dStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension(_) => Dc3dStatus::Dimension,
            Error::Argument(_) => Dc3dStatus::Argument,
            Error::NonFinite(_) => Dc3dStatus::NonFinite,
            Error::Format(_) => Dc3dStatus::Format,
            Error::Validation { .. } => Dc3dStatus::Validation,
            Error::Compatibility(_) => Dc3dStatus::Compatibility,
            Error::Selection(_) => Dc3dStatus::Selection,
            Error::Placement(_) => Dc3dStatus::Placement,
            Error::Visibility(_) => Dc3dStatus::Visibility,
            Error::Io { .. } => Dc3dStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Dc3dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            Dc3dStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            Dc3dStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(Dc3dStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(Dc3dStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn give_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c = CString::new(s).map_err(|_| Failure(Dc3dStatus::Format, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn to_box(b: &Dc3dBox) -> Result<Box3, Failure> {
    Ok(Box3::new(b.center, b.lengths)?)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dc3d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn dc3d_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc3d_model_load(path: *const c_char, out: *mut *mut Dc3dModel) -> Dc3dStatus {
    guard(|| {
        let path = text(path, "path")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let checkpoint = Checkpoint::load(path)?;
        let model = checkpoint.to_model()?;
        *out = Box::into_raw(Box::new(Dc3dModel { checkpoint, model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dc3d_model_load`], or be null.
#[no_mangle]
pub unsafe extern "C" fn dc3d_model_free(model: *mut Dc3dModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output tokens, or 0 for a null handle.
///
/// # Safety
/// `model` must come from [`dc3d_model_load`], or be null.
#[no_mangle]
pub unsafe extern "C" fn dc3d_model_vocab_size(model: *const Dc3dModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.vocab_size())
}

/// Captions every object of a scene (given as scene JSON) using its
/// ground-truth boxes. Writes a JSON array of `{"id", "caption"}`.
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string to free with
/// [`dc3d_string_free`].
#[no_mangle]
pub unsafe extern "C" fn dc3d_caption_scene(
    model: *const Dc3dModel,
    scene_json: *const c_char,
    out_json: *mut *mut c_char,
) -> Dc3dStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let scene = Scene::from_json(text(scene_json, "scene_json")?)?;
        scene.validate()?;
        let lines = caption_lines(&m.checkpoint, &scene, ObjectSelector::All)?;
        let items: Vec<serde_json::Value> = scene
            .objects
            .iter()
            .zip(lines)
            .map(|(o, line)| {
                let caption = line.rsplit('\t').next().unwrap_or_default().to_string();
                serde_json::json!({ "id": o.id, "caption": caption })
            })
            .collect();
        give_string(out_json, serde_json::Value::Array(items).to_string())
    })
}

/// Decodes predictions for every scene in `data_dir` and scores them.
/// `ks` holds `n_ks` IoU thresholds; the report JSON goes to `out_json`.
///
/// # Safety
/// Pointers must be valid and `ks` must hold `n_ks` values.
#[no_mangle]
pub unsafe extern "C" fn dc3d_model_evaluate(
    model: *const Dc3dModel,
    data_dir: *const c_char,
    ks: *const f64,
    n_ks: usize,
    out_json: *mut *mut c_char,
) -> Dc3dStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let scenes = load_dataset(text(data_dir, "data_dir")?)?;
        if ks.is_null() {
            return Err(null("ks"));
        }
        let ks = std::slice::from_raw_parts(ks, n_ks);
        let preds = predict(&m.model, &m.checkpoint.vocab, &scenes, DEFAULT_NMS_THRESHOLD)?;
        let report = evaluate(&preds, &scenes, ks, MAP_IOU)?;
        give_string(out_json, report.to_json())
    })
}

/// Scores a prediction file (JSON text) against the scenes in `data_dir`.
///
/// # Safety
/// Pointers must be valid and `ks` must hold `n_ks` values.
#[no_mangle]
pub unsafe extern "C" fn dc3d_evaluate_predictions(
    predictions_json: *const c_char,
    data_dir: *const c_char,
    ks: *const f64,
    n_ks: usize,
    out_json: *mut *mut c_char,
) -> Dc3dStatus {
    guard(|| {
        let preds: Vec<Prediction> = serde_json::from_str(text(predictions_json, "predictions_json")?)
            .map_err(|e| Failure(Dc3dStatus::Format, e.to_string()))?;
        let scenes = load_dataset(Path::new(text(data_dir, "data_dir")?))?;
        if ks.is_null() {
            return Err(null("ks"));
        }
        let ks = std::slice::from_raw_parts(ks, n_ks);
        give_string(out_json, evaluate(&preds, &scenes, ks, MAP_IOU)?.to_json())
    })
}

/// # Safety
/// `a`, `b` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dc3d_box_iou(a: *const Dc3dBox, b: *const Dc3dBox, out: *mut f64) -> Dc3dStatus {
    guard(|| {
        let a = to_box(a.as_ref().ok_or_else(|| null("a"))?)?;
        let b = to_box(b.as_ref().ok_or_else(|| null("b"))?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = box_iou(&a, &b);
        Ok(())
    })
}

/// Greedy NMS. `kept` must have room for `n` indices; the number written
/// goes to `n_kept`.
///
/// # Safety
/// Arrays must hold `n` elements; `kept` and `n_kept` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc3d_nms(
    boxes: *const Dc3dBox,
    scores: *const f64,
    n: usize,
    iou_threshold: f64,
    kept: *mut usize,
    n_kept: *mut usize,
) -> Dc3dStatus {
    guard(|| {
        if n > 0 && (boxes.is_null() || scores.is_null() || kept.is_null()) {
            return Err(null("array argument"));
        }
        let n_kept = n_kept.as_mut().ok_or_else(|| null("n_kept"))?;
        let (bx, sc) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            let bx = std::slice::from_raw_parts(boxes, n).iter().map(to_box).collect::<Result<Vec<_>, _>>()?;
            (bx, std::slice::from_raw_parts(scores, n).to_vec())
        };
        let keep = nms(&bx, &sc, iou_threshold)?;
        if !keep.is_empty() {
            ptr::copy_nonoverlapping(keep.as_ptr(), kept, keep.len());
        }
        *n_kept = keep.len();
        Ok(())
    })
}

/// BLEU-4, METEOR and ROUGE-L of one caption against `n_refs` references.
/// Text is tokenized the same way as dataset captions.
///
/// # Safety
/// `refs` must hold `n_refs` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dc3d_sentence_scores(
    candidate: *const c_char,
    refs: *const *const c_char,
    n_refs: usize,
    out: *mut Dc3dSentenceScores,
) -> Dc3dStatus {
    guard(|| {
        let cand = tokenize(text(candidate, "candidate")?);
        if refs.is_null() && n_refs > 0 {
            return Err(null("refs"));
        }
        if n_refs == 0 {
            return Err(Failure(Dc3dStatus::Argument, "no references".into()));
        }
        let refs = std::slice::from_raw_parts(refs, n_refs)
            .iter()
            .map(|&r| text(r, "reference").map(tokenize))
            .collect::<Result<Vec<_>, _>>()?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = Dc3dSentenceScores {
            bleu4: bleu4(&cand, &refs),
            meteor: meteor(&cand, &refs),
            rouge_l: rouge_l(&cand, &refs),
        };
        Ok(())
    })
}

/// Checks that a vocabulary file matches the model's.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dc3d_model_check_vocab(model: *const Dc3dModel, vocab_path: *const c_char) -> Dc3dStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let v = Vocabulary::load(text(vocab_path, "vocab_path")?)?;
        if v != m.checkpoint.vocab {
            return Err(Error::Compatibility("vocabulary differs from the model's".into()).into());
        }
        Ok(())
    })
}
