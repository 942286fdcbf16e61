//! Nearest-feature caption retrieval from a training split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenedata::{Scene, FEATURE_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub feature: Vec<f32>,
    pub caption: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub entries: Vec<IndexEntry>,
}

impl RetrievalIndex {
    /// One entry per annotated object, carrying its first reference caption.
    pub fn from_scenes(scenes: &[Scene]) -> Self {
        let entries = scenes
            .iter()
            .flat_map(|s| &s.objects)
            .filter_map(|o| {
                o.captions.first().map(|c| IndexEntry {
                    feature: o.feature.clone(),
                    caption: c.clone(),
                })
            })
            .collect();
        RetrievalIndex { entries }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.feature.len() != FEATURE_DIM {
                return Err(Error::validation(
                    format!("entries[{i}].feature"),
                    format!("expected {FEATURE_DIM} values, found {}", e.feature.len()),
                ));
            }
            if e.feature.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!("entries[{i}].feature"), "non-finite value"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self).expect("index serializes")).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: RetrievalIndex =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        index.validate()?;
        Ok(index)
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Index of the entry most cosine-similar to `query`, ties to the lower index.
pub fn retrieve_index(query: &[f32], index: &RetrievalIndex) -> Result<usize> {
    if index.entries.is_empty() {
        return Err(Error::Argument("retrieval index is empty".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, e) in index.entries.iter().enumerate() {
        if e.feature.len() != query.len() {
            return Err(Error::Dimension(format!(
                "query has {} values, entry {i} has {}",
                query.len(),
                e.feature.len()
            )));
        }
        let s = cosine(query, &e.feature);
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

pub fn retrieve_caption<'a>(query: &[f32], index: &'a RetrievalIndex) -> Result<&'a str> {
    retrieve_index(query, index).map(|i| index.entries[i].caption.as_str())
}
