//! Graph encoder and caption decoder sharing one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::captioner::{
    build_attention_context, generate, AttentionQuery, CaptionerParams, DecoderOptions, TargetBatch, DEFAULT_HIDDEN,
};
use crate::diffcore::{Bound, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::relgraph::{propagate, GraphParams, SceneGraph, DEFAULT_GRAPH_STEPS, DEFAULT_NEIGHBORS};
use crate::scenedata::{EmbeddingTable, ProposalSet, TokenSequence, MAX_CAPTION_TOKENS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub neighbors: usize,
    pub graph_steps: usize,
    pub residual: bool,
    /// Run message passing and add relation features to the attention rows.
    pub use_graph: bool,
    pub use_attention: bool,
    pub attention_query: AttentionQuery,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: DEFAULT_HIDDEN,
            neighbors: DEFAULT_NEIGHBORS,
            graph_steps: DEFAULT_GRAPH_STEPS,
            residual: false,
            use_graph: true,
            use_attention: true,
            attention_query: AttentionQuery::Previous,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::validation("model.hidden", "must be positive"));
        }
        if self.use_graph && self.neighbors == 0 {
            return Err(Error::validation("model.neighbors", "must be positive"));
        }
        Ok(())
    }

    pub fn decoder_options(&self) -> DecoderOptions {
        DecoderOptions {
            use_attention: self.use_attention,
            query: self.attention_query,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub graph: GraphParams,
    pub captioner: CaptionerParams,
}

/// Scene-level forward results on a tape.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub graph: SceneGraph,
    /// `[M × 128]` enhanced features.
    pub nodes: Var,
    /// One row per graph edge.
    pub relations: Option<Var>,
    pub valid: Vec<usize>,
}

impl Model {
    pub fn new(config: ModelConfig, embeddings: &EmbeddingTable) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let graph = GraphParams::new(&mut store, config.graph_steps, config.residual, &mut rng);
        let captioner = CaptionerParams::new(&mut store, embeddings, config.hidden, &mut rng);
        Ok(Model {
            config,
            store,
            graph,
            captioner,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.captioner.vocab_size
    }

    /// Builds the proposal graph and runs the encoder.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, proposals: &ProposalSet) -> Result<Encoded> {
        let valid = proposals.valid_indices();
        let features = tape.constant(&proposals.features);
        if !self.config.use_graph {
            let graph = SceneGraph::new(proposals.len(), Vec::new(), proposals.mask.clone())?;
            return Ok(Encoded {
                graph,
                nodes: features,
                relations: None,
                valid,
            });
        }
        let graph = SceneGraph::from_proposals(proposals, self.config.neighbors);
        let out = propagate(tape, p, &self.graph, &graph, features, self.config.graph_steps)?;
        Ok(Encoded {
            graph,
            nodes: out.nodes,
            relations: out.relations,
            valid,
        })
    }

    /// Decoder inputs for the proposals in `targets`.
    pub fn target_batch<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, enc: &Encoded, targets: &[usize]) -> Result<TargetBatch> {
        if targets.is_empty() {
            return Err(Error::Argument("no targets to decode".into()));
        }
        let rows = if enc.valid.is_empty() { targets.to_vec() } else { enc.valid.clone() };
        let contexts = targets
            .iter()
            .map(|&k| build_attention_context(tape, enc.nodes, enc.relations, &enc.graph.edges, k, &rows))
            .collect::<Result<Vec<_>>>()?;
        let features = tape.gather_rows(enc.nodes, targets)?;
        TargetBatch::new(tape, p, &self.captioner, features, contexts)
    }

    /// Greedy captions for the given proposals.
    pub fn caption(&self, proposals: &ProposalSet, targets: &[usize]) -> Result<Vec<TokenSequence>> {
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::<f32>::new();
        let p = self.store.bind(&mut tape);
        let enc = self.encode(&mut tape, &p, proposals)?;
        let batch = self.target_batch(&mut tape, &p, &enc, targets)?;
        generate(
            &mut tape,
            &p,
            &self.captioner,
            &self.config.decoder_options(),
            &batch,
            MAX_CAPTION_TOKENS,
        )
    }
}
