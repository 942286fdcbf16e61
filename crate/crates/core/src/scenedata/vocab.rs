use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];
/// Content tokens kept per caption.
pub const MAX_CAPTION_TOKENS: usize = 30;

const STRIP: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '(', ')'];

/// Lowercases, splits on whitespace and trims punctuation from each token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(STRIP).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Token indices wrapped in SOS/EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens between SOS and the first EOS.
    pub fn content(&self) -> &[usize] {
        let body = match self.0.first() {
            Some(&SOS) => &self.0[1..],
            _ => &self.0[..],
        };
        let end = body.iter().position(|&t| t == EOS || t == PAD).unwrap_or(body.len());
        &body[..end]
    }
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            index: HashMap::new(),
        };
        for (i, t) in RESERVED.iter().enumerate() {
            v.index.insert(t.to_string(), i);
        }
        for t in tokens {
            let t = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary token {t:?}")));
            }
            if v.index.contains_key(&t) {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Non-reserved tokens in index order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        encode_caption(text, self)
    }

    /// Content tokens of a sequence, without SOS/EOS.
    pub fn decode(&self, seq: &TokenSequence) -> Vec<String> {
        seq.content()
            .iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.words().join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_tokens(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }
}

/// Tokens seen at least `min_count` times, most frequent first, ties in
/// lexicographic order.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for caption in corpus {
        for t in tokenize(caption.as_ref()) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t)).expect("tokens are unique and non-empty")
}

pub fn encode_caption(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let mut ids = vec![SOS];
    ids.extend(
        tokenize(text)
            .iter()
            .take(MAX_CAPTION_TOKENS)
            .map(|t| vocab.index_of(t)),
    );
    ids.push(EOS);
    TokenSequence(ids)
}
