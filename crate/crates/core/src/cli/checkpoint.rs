//! Single-file checkpoints: a text manifest, then raw little-endian f32 arrays.
//!
//! ```text
//! densecap3d-checkpoint
//! version 1
//! config {"hidden":512,...}
//! vocab_size 26
//! iteration 5000
//! token the
//! ...
//! param graph.step0.w0 1 256,128 0 131072
//! ...
//! adam_step 5000
//! moment first 0 <offset> <bytes>
//! moment second 0 <offset> <bytes>
//! end
//! <data>
//! ```
//!
//! Offsets and lengths are in bytes from the start of the data section.

use std::fs;
use std::path::Path;

use crate::diffcore::{AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::scenedata::{EmbeddingTable, Vocabulary, RESERVED};

pub const MAGIC: &str = "densecap3d-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
    pub iteration: usize,
}

impl Checkpoint {
    pub fn new(model: &Model, vocab: &Vocabulary, optimizer: Option<&AdamState>, iteration: usize) -> Result<Self> {
        if model.vocab_size() != vocab.len() {
            return Err(Error::Compatibility(format!(
                "model has {} output tokens, vocabulary has {}",
                model.vocab_size(),
                vocab.len()
            )));
        }
        Ok(Checkpoint {
            config: model.config.clone(),
            vocab: vocab.clone(),
            params: model.store.clone(),
            optimizer: optimizer.cloned(),
            iteration,
        })
    }

    /// Rebuilds the model and copies every stored tensor into it.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone(), &EmbeddingTable::zeros(self.vocab.len()))?;
        if model.store.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, configuration expects {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (expected, stored) in model.store.entries().to_vec().iter().zip(self.params.entries()) {
            if expected.name != stored.name || expected.trainable != stored.trainable {
                return Err(Error::Format(format!(
                    "tensor {} found where {} was expected",
                    stored.name, expected.name
                )));
            }
            let id = model.store.find(&expected.name).expect("own entry");
            model.store.set(id, stored.tensor.clone()).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        let mut data: Vec<u8> = Vec::new();
        let push = |data: &mut Vec<u8>, xs: &[f32]| {
            let offset = data.len();
            for x in xs {
                data.extend_from_slice(&x.to_le_bytes());
            }
            (offset, xs.len() * 4)
        };
        head.push_str(&format!("{MAGIC}\nversion {FORMAT_VERSION}\n"));
        head.push_str(&format!(
            "config {}\n",
            serde_json::to_string(&self.config).expect("config serializes")
        ));
        head.push_str(&format!("vocab_size {}\niteration {}\n", self.vocab.len(), self.iteration));
        for w in self.vocab.words() {
            head.push_str(&format!("token {w}\n"));
        }
        for e in self.params.entries() {
            let shape: Vec<String> = e.tensor.shape().iter().map(usize::to_string).collect();
            let (off, len) = push(&mut data, e.tensor.data());
            head.push_str(&format!(
                "param {} {} {} {off} {len}\n",
                e.name,
                u8::from(e.trainable),
                if shape.is_empty() { "-".to_string() } else { shape.join(",") }
            ));
        }
        if let Some(opt) = &self.optimizer {
            head.push_str(&format!("adam_step {}\n", opt.step));
            for (kind, moments) in [("first", &opt.first), ("second", &opt.second)] {
                for (i, m) in moments.iter().enumerate() {
                    let (off, len) = push(&mut data, m);
                    head.push_str(&format!("moment {kind} {i} {off} {len}\n"));
                }
            }
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |msg: String| Error::Format(msg);
        let mut lines = Vec::new();
        let mut pos = 0;
        loop {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| fmt("manifest is not terminated by an end line".into()))?;
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| fmt("manifest is not UTF-8".into()))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line);
        }
        let data = &bytes[pos..];
        let mut it = lines.into_iter();
        if it.next() != Some(MAGIC) {
            return Err(fmt("not a densecap3d checkpoint".into()));
        }
        let version: u32 = field(it.next(), "version")?
            .parse()
            .map_err(|_| fmt("bad version line".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let config: ModelConfig = serde_json::from_str(field(it.next(), "config")?)
            .map_err(|e| fmt(format!("bad config line: {e}")))?;
        let vocab_size: usize = parse(field(it.next(), "vocab_size")?)?;
        let iteration: usize = parse(field(it.next(), "iteration")?)?;

        let mut cursor = 0usize;
        let mut read = |off: usize, len: usize| -> Result<Vec<f32>> {
            if off != cursor || len % 4 != 0 || off.checked_add(len).is_none_or(|end| end > data.len()) {
                return Err(Error::Format(format!("array at byte {off} of length {len} is out of place")));
            }
            cursor += len;
            Ok(data[off..off + len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        };

        let mut words = Vec::new();
        let mut params = ParamStore::new();
        let mut optimizer: Option<AdamState> = None;
        for line in it {
            let parts: Vec<&str> = line.split(' ').collect();
            match parts.as_slice() {
                ["token", w] => words.push(w.to_string()),
                ["param", name, trainable, shape, off, len] => {
                    let shape: Vec<usize> = if *shape == "-" {
                        Vec::new()
                    } else {
                        shape.split(',').map(parse).collect::<Result<_>>()?
                    };
                    let values = read(parse(off)?, parse(len)?)?;
                    let tensor = Tensor::new(shape, values).map_err(|e| fmt(format!("tensor {name}: {e}")))?;
                    if params.find(name).is_some() {
                        return Err(fmt(format!("duplicate tensor {name}")));
                    }
                    params.add(*name, tensor, *trainable == "1");
                }
                ["adam_step", step] => {
                    optimizer = Some(AdamState {
                        step: parse(step)?,
                        ..AdamState::default()
                    })
                }
                ["moment", kind, index, off, len] => {
                    let opt = optimizer
                        .as_mut()
                        .ok_or_else(|| fmt("moment before adam_step".into()))?;
                    let list = match *kind {
                        "first" => &mut opt.first,
                        "second" => &mut opt.second,
                        _ => return Err(fmt(format!("unknown moment kind {kind}"))),
                    };
                    if parse::<usize>(index)? != list.len() {
                        return Err(fmt("moments out of order".into()));
                    }
                    list.push(read(parse(off)?, parse(len)?)?);
                }
                _ => return Err(fmt(format!("unrecognized manifest line {line:?}"))),
            }
        }
        if cursor != data.len() {
            return Err(fmt(format!(
                "data section has {} bytes, manifest describes {cursor}",
                data.len()
            )));
        }
        let vocab = Vocabulary::from_tokens(words)?;
        if vocab.len() != vocab_size {
            return Err(fmt(format!(
                "vocab_size {vocab_size} but {} tokens listed",
                vocab.len() - RESERVED.len()
            )));
        }
        let ckpt = Checkpoint {
            config,
            vocab,
            params,
            optimizer,
            iteration,
        };
        // Shape and name agreement with the configuration.
        ckpt.to_model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    line.and_then(|l| l.strip_prefix(key))
        .and_then(|l| l.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("missing {key} line")))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad number {s:?} in manifest")))
}

pub fn save_checkpoint(
    model: &Model,
    vocab: &Vocabulary,
    optimizer: Option<&AdamState>,
    iteration: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    Checkpoint::new(model, vocab, optimizer, iteration)?.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
