//! Attention decoder: fusion cell, attention over proposals, language cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{argmax, gru_cell, Bound, GruParams, Linear, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::relgraph::NODE_DIM;
use crate::scenedata::{EmbeddingTable, TokenSequence, EMBEDDING_DIM, EOS, MAX_CAPTION_TOKENS, PAD, SOS};

pub const DEFAULT_HIDDEN: usize = 512;

/// Fusion-cell state used as the attention query and fed to the language cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionQuery {
    /// State from the previous time step.
    #[default]
    Previous,
    /// State produced at the current time step.
    Current,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderOptions {
    pub use_attention: bool,
    pub query: AttentionQuery,
}

impl Default for DecoderOptions {
    fn default() -> Self {
        DecoderOptions {
            use_attention: true,
            query: AttentionQuery::Previous,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaptionerParams {
    /// Frozen `[V × 300]` word vectors.
    pub embedding: ParamId,
    pub fusion: GruParams,
    pub w_v: ParamId,
    pub w_h: ParamId,
    pub w_a: ParamId,
    pub fuse: Linear,
    pub language: GruParams,
    pub output: Linear,
    pub hidden: usize,
    pub vocab_size: usize,
}

impl CaptionerParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        embeddings: &EmbeddingTable,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let vocab_size = embeddings.vocab_size();
        let embedding = store.add("caption.embedding", embeddings.table.clone(), false);
        let fusion = GruParams::new(store, "caption.fusion", hidden + NODE_DIM + EMBEDDING_DIM, hidden, rng);
        let w_v = store.add_matrix("caption.attention.w_v", NODE_DIM, NODE_DIM, rng);
        let w_h = store.add_matrix("caption.attention.w_h", hidden, NODE_DIM, rng);
        let w_a = store.add_matrix("caption.attention.w_a", NODE_DIM, 1, rng);
        let fuse = Linear::new(store, "caption.fuse", hidden + NODE_DIM, hidden, rng);
        let language = GruParams::new(store, "caption.language", hidden, hidden, rng);
        let output = Linear::new(store, "caption.output", hidden, vocab_size, rng);
        CaptionerParams {
            embedding,
            fusion,
            w_v,
            w_h,
            w_a,
            fuse,
            language,
            output,
            hidden,
            vocab_size,
        }
    }
}

/// Rows the target object attends over: valid proposals, with the target's
/// relation features added to its neighbors' rows.
#[derive(Clone, Copy, Debug)]
pub struct AttentionContext {
    /// `[R × D]`.
    pub values: Var,
    pub target: usize,
}

/// Builds the attention rows for target `k` from enhanced node features
/// `nodes` `[M × D]`, restricted to `rows` (in that order). `relations`
/// holds one row per entry of `edges`.
pub fn build_attention_context<T: Real>(
    tape: &mut Tape<T>,
    nodes: Var,
    relations: Option<Var>,
    edges: &[(usize, usize)],
    k: usize,
    rows: &[usize],
) -> Result<AttentionContext> {
    let m = tape.shape(nodes)[0];
    if k >= m {
        return Err(Error::Argument(format!("target {k} outside 0..{m}")));
    }
    if rows.is_empty() {
        return Err(Error::Argument("attention context needs at least one row".into()));
    }
    let base = tape.gather_rows(nodes, rows)?;
    let Some(rel) = relations else {
        return Ok(AttentionContext { values: base, target: k });
    };
    let mut picked = Vec::new();
    let mut at = Vec::new();
    for (e, &(src, dst)) in edges.iter().enumerate() {
        if src != k || dst == k {
            continue;
        }
        if let Some(pos) = rows.iter().position(|&r| r == dst) {
            picked.push(e);
            at.push(pos);
        }
    }
    if picked.is_empty() {
        return Ok(AttentionContext { values: base, target: k });
    }
    let r = tape.gather_rows(rel, &picked)?;
    let placed = tape.segment_sum(r, &at, rows.len())?;
    let values = tape.add(base, placed)?;
    Ok(AttentionContext { values, target: k })
}

/// Attention scores projected through `W_v·W_a`, `[1 × R]`. Independent of
/// the decoder state, so computed once per target.
pub fn context_scores<T: Real>(tape: &mut Tape<T>, p: &Bound, params: &CaptionerParams, ctx: &AttentionContext) -> Result<Var> {
    let vw = tape.matmul(ctx.values, p[params.w_v])?;
    let s = tape.matmul(vw, p[params.w_a])?;
    let r = tape.shape(s)[0];
    tape.reshape(s, &[1, r])
}

/// `(alpha [1 × R], v̂ [1 × D])` for one target and query state `h1` `[1 × H]`.
pub fn attention_step<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    params: &CaptionerParams,
    ctx: &AttentionContext,
    scores: Var,
    h1: Var,
) -> Result<(Var, Var)> {
    let hw = tape.matmul(h1, p[params.w_h])?;
    let hq = tape.matmul(hw, p[params.w_a])?;
    let s = tape.add(scores, hq)?;
    let alpha = tape.softmax(s, 1)?;
    let v_hat = tape.matmul(alpha, ctx.values)?;
    Ok((alpha, v_hat))
}

/// One decoding target: its own feature row and attention rows.
#[derive(Clone, Copy, Debug)]
pub struct Target {
    pub ctx: AttentionContext,
    pub scores: Var,
}

/// Batch of targets decoded together.
#[derive(Clone, Debug)]
pub struct TargetBatch {
    /// `[B × D]`.
    pub features: Var,
    pub targets: Vec<Target>,
}

impl TargetBatch {
    pub fn new<T: Real>(
        tape: &mut Tape<T>,
        p: &Bound,
        params: &CaptionerParams,
        features: Var,
        contexts: Vec<AttentionContext>,
    ) -> Result<Self> {
        if tape.shape(features)[0] != contexts.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} contexts",
                tape.shape(features)[0],
                contexts.len()
            )));
        }
        let targets = contexts
            .into_iter()
            .map(|ctx| Ok(Target { scores: context_scores(tape, p, params, &ctx)?, ctx }))
            .collect::<Result<_>>()?;
        Ok(TargetBatch { features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    /// `[B × H]`.
    pub h1: Var,
    pub h2: Var,
}

impl DecoderState {
    pub fn zeros<T: Real>(tape: &mut Tape<T>, batch: usize, hidden: usize) -> Self {
        DecoderState {
            h1: tape.zeros(&[batch, hidden]),
            h2: tape.zeros(&[batch, hidden]),
        }
    }
}

/// Attention weights of one step, one `[1 × R]` row per target.
pub type AttentionWeights = Vec<Var>;

/// One step for the whole batch; returns logits `[B × V]`, the next state
/// and the attention weights (empty when attention is off).
pub fn decode_step<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    params: &CaptionerParams,
    opts: &DecoderOptions,
    state: &DecoderState,
    batch: &TargetBatch,
    prev_tokens: &[usize],
) -> Result<(Var, DecoderState, AttentionWeights)> {
    if prev_tokens.len() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} previous tokens for a batch of {}",
            prev_tokens.len(),
            batch.len()
        )));
    }
    let x = tape.gather_rows(p[params.embedding], prev_tokens)?;
    let u1 = tape.concat(&[state.h2, batch.features, x], 1)?;
    let h1 = gru_cell(tape, p, &params.fusion, u1, state.h1)?;
    let query = match opts.query {
        AttentionQuery::Previous => state.h1,
        AttentionQuery::Current => h1,
    };
    let mut alphas = Vec::new();
    let v_hat = if opts.use_attention {
        let mut rows = Vec::with_capacity(batch.len());
        for (b, t) in batch.targets.iter().enumerate() {
            let q = tape.row(query, b)?;
            let (alpha, v) = attention_step(tape, p, params, &t.ctx, t.scores, q)?;
            alphas.push(alpha);
            rows.push(v);
        }
        tape.concat(&rows, 0)?
    } else {
        batch.features
    };
    let u2 = tape.concat(&[query, v_hat], 1)?;
    let u2 = params.fuse.forward(tape, p, u2)?;
    let u2 = tape.relu(u2)?;
    let h2 = gru_cell(tape, p, &params.language, u2, state.h2)?;
    let logits = params.output.forward(tape, p, h2)?;
    Ok((logits, DecoderState { h1, h2 }, alphas))
}

#[derive(Clone, Copy, Debug)]
pub struct TeacherForced {
    /// Mean cross-entropy per predicted token.
    pub loss: Var,
    pub tokens: usize,
    /// Tokens whose argmax prediction matches the ground truth.
    pub correct: usize,
}

/// Teacher-forced decoding of `gts` (one per target, each starting with
/// SOS); padding past each sequence's end is ignored.
pub fn teacher_forced_loss<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    params: &CaptionerParams,
    opts: &DecoderOptions,
    batch: &TargetBatch,
    gts: &[TokenSequence],
) -> Result<TeacherForced> {
    if gts.len() != batch.len() || gts.is_empty() {
        return Err(Error::Dimension(format!("{} captions for a batch of {}", gts.len(), batch.len())));
    }
    if let Some(g) = gts.iter().find(|g| g.len() < 2 || g.0[0] != SOS) {
        return Err(Error::Argument(format!("caption {:?} must start with SOS and have a next token", g.0)));
    }
    let steps = gts.iter().map(|g| g.len() - 1).max().unwrap();
    let mut state = DecoderState::zeros(tape, batch.len(), params.hidden);
    let mut total = None;
    let (mut tokens, mut correct) = (0, 0);
    for t in 0..steps {
        let prev: Vec<usize> = gts.iter().map(|g| if t + 1 < g.len() { g.0[t] } else { PAD }).collect();
        let targets: Vec<Option<usize>> = gts.iter().map(|g| g.0.get(t + 1).copied()).collect();
        let (logits, next, _) = decode_step(tape, p, params, opts, &state, batch, &prev)?;
        state = next;
        let values = tape.value(logits);
        for (b, tgt) in targets.iter().enumerate() {
            if let Some(y) = *tgt {
                tokens += 1;
                if argmax(&values[b * params.vocab_size..(b + 1) * params.vocab_size]) == y {
                    correct += 1;
                }
            }
        }
        let ce = tape.cross_entropy_sum(logits, &targets)?;
        total = Some(match total {
            None => ce,
            Some(acc) => tape.add(acc, ce)?,
        });
    }
    let loss = tape.scale(total.unwrap(), 1.0 / tokens as f64)?;
    Ok(TeacherForced { loss, tokens, correct })
}

/// Greedy decoding from SOS until EOS or `max_tokens` content tokens.
pub fn generate<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    params: &CaptionerParams,
    opts: &DecoderOptions,
    batch: &TargetBatch,
    max_tokens: usize,
) -> Result<Vec<TokenSequence>> {
    let max_tokens = max_tokens.min(MAX_CAPTION_TOKENS);
    let n = batch.len();
    let mut seqs: Vec<Vec<usize>> = vec![vec![SOS]; n];
    let mut done = vec![false; n];
    let mut state = DecoderState::zeros(tape, n, params.hidden);
    let mut prev = vec![SOS; n];
    for _ in 0..=max_tokens {
        if done.iter().all(|&d| d) {
            break;
        }
        let (logits, next, _) = decode_step(tape, p, params, opts, &state, batch, &prev)?;
        state = next;
        let values = tape.value(logits);
        for b in 0..n {
            if done[b] {
                prev[b] = PAD;
                continue;
            }
            let content = seqs[b].len() - 1;
            let tok = if content >= max_tokens {
                EOS
            } else {
                argmax(&values[b * params.vocab_size..(b + 1) * params.vocab_size])
            };
            seqs[b].push(tok);
            prev[b] = tok;
            if tok == EOS {
                done[b] = true;
            }
        }
    }
    for s in &mut seqs {
        if s.last() != Some(&EOS) {
            s.push(EOS);
        }
    }
    Ok(seqs.into_iter().map(TokenSequence).collect())
}
