use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

use super::vocab::{Vocabulary, RESERVED};

pub const EMBEDDING_DIM: usize = 300;

/// Word vectors aligned with vocabulary indices, `[V × 300]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor,
}

impl EmbeddingTable {
    pub fn zeros(vocab_size: usize) -> Self {
        EmbeddingTable {
            table: Tensor::zeros(&[vocab_size, EMBEDDING_DIM]),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        self.table.row(index)
    }
}

fn parse_rows(text: &str) -> Result<HashMap<&str, Vec<f32>>> {
    let mut rows = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|v| v.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::Format(format!("embedding line {}: {e}", lineno + 1)))?;
        if values.len() != EMBEDDING_DIM {
            return Err(Error::Format(format!(
                "embedding line {} has {} values, expected {EMBEDDING_DIM}",
                lineno + 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("embedding line {} is not finite", lineno + 1)));
        }
        rows.entry(token).or_insert(values);
    }
    Ok(rows)
}

/// Parses embedding text; reserved and missing tokens get zero rows.
pub fn embeddings_from_str(text: &str, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let rows = parse_rows(text)?;
    let mut table = Tensor::zeros(&[vocab.len(), EMBEDDING_DIM]);
    for (i, token) in vocab.tokens().iter().enumerate().skip(RESERVED.len()) {
        if let Some(v) = rows.get(token.as_str()) {
            table.data_mut()[i * EMBEDDING_DIM..(i + 1) * EMBEDDING_DIM].copy_from_slice(v);
        }
    }
    Ok(EmbeddingTable { table })
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    embeddings_from_str(&text, vocab)
}

/// Writes `token v1 … v300` lines for every non-reserved vocabulary entry.
pub fn save_embeddings(table: &EmbeddingTable, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (i, token) in vocab.tokens().iter().enumerate().skip(RESERVED.len()) {
        out.push_str(token);
        for v in table.row(i) {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
