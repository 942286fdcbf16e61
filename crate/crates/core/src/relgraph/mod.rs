//! Message passing over proposal features on a KNN graph.

use rand::Rng;

use crate::diffcore::{Bound, Mlp, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{knn_graph, ORIENTATION_BINS};
use crate::scenedata::ProposalSet;

pub const NODE_DIM: usize = 128;
pub const DEFAULT_GRAPH_STEPS: usize = 2;
pub const DEFAULT_NEIGHBORS: usize = 10;

/// Proposal graph. Edges join valid nodes only.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub mask: Vec<bool>,
}

impl SceneGraph {
    /// KNN graph over the valid proposals' box centers.
    pub fn from_proposals(proposals: &ProposalSet, k: usize) -> Self {
        let valid = proposals.valid_indices();
        let centers: Vec<[f64; 3]> = valid.iter().map(|&i| proposals.boxes[i].center).collect();
        let edges = if valid.is_empty() || k == 0 {
            Vec::new()
        } else {
            knn_graph(&centers, k)
                .into_iter()
                .map(|(a, b)| (valid[a], valid[b]))
                .collect()
        };
        SceneGraph {
            num_nodes: proposals.len(),
            edges,
            mask: proposals.mask.clone(),
        }
    }

    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != num_nodes {
            return Err(Error::Dimension(format!("{} mask entries for {num_nodes} nodes", mask.len())));
        }
        for &(a, b) in &edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Argument(format!("edge {a}→{b} outside 0..{num_nodes}")));
            }
            if !mask[a] || !mask[b] {
                return Err(Error::Argument(format!("edge {a}→{b} touches a masked node")));
            }
        }
        Ok(SceneGraph { num_nodes, edges, mask })
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }
}

#[derive(Clone, Debug)]
pub struct GraphParams {
    /// One message MLP per propagation step, `2D → D → D`.
    pub steps: Vec<Mlp>,
    /// Extra message layer producing relation features.
    pub relation: Mlp,
    /// `D → D → 6`.
    pub orientation: Mlp,
    /// Add the aggregated messages to the node features instead of replacing them.
    pub residual: bool,
}

impl GraphParams {
    pub fn new<R: Rng>(store: &mut ParamStore, steps: usize, residual: bool, rng: &mut R) -> Self {
        let d = NODE_DIM;
        GraphParams {
            steps: (0..steps)
                .map(|s| Mlp::new(store, &format!("graph.step{s}"), &[2 * d, d, d], rng))
                .collect(),
            relation: Mlp::new(store, "graph.relation", &[2 * d, d, d], rng),
            orientation: Mlp::new(store, "graph.orientation", &[d, d, ORIENTATION_BINS], rng),
            residual,
        }
    }
}

/// `f([g_i, g_j − g_i])` for row-aligned batches of source and target features.
pub fn message<T: Real>(tape: &mut Tape<T>, p: &Bound, f: &Mlp, g_i: Var, g_j: Var) -> Result<Var> {
    if tape.shape(g_i) != tape.shape(g_j) {
        return Err(Error::Dimension(format!(
            "message inputs {:?} and {:?}",
            tape.shape(g_i),
            tape.shape(g_j)
        )));
    }
    let diff = tape.sub(g_j, g_i)?;
    let x = tape.concat(&[g_i, diff], 1)?;
    f.forward(tape, p, x)
}

/// Per-node sum of the messages whose source is that node; nodes with no
/// outgoing edge get zeros.
pub fn aggregate<T: Real>(tape: &mut Tape<T>, messages: Option<Var>, sources: &[usize], num_nodes: usize) -> Result<Var> {
    match messages {
        Some(m) if !sources.is_empty() => tape.segment_sum(m, sources, num_nodes),
        _ => Ok(tape.zeros(&[num_nodes, NODE_DIM])),
    }
}

fn edge_messages<T: Real>(tape: &mut Tape<T>, p: &Bound, f: &Mlp, g: Var, graph: &SceneGraph) -> Result<Option<Var>> {
    if graph.edges.is_empty() {
        return Ok(None);
    }
    let gi = tape.gather_rows(g, &graph.sources())?;
    let gj = tape.gather_rows(g, &graph.targets())?;
    message(tape, p, f, gi, gj).map(Some)
}

#[derive(Clone, Copy, Debug)]
pub struct GraphOutput {
    /// Enhanced node features `[M × D]`.
    pub nodes: Var,
    /// Relation features `[E × D]`, one row per edge; `None` without edges.
    pub relations: Option<Var>,
}

/// Runs `steps` rounds of message passing starting from `features`, then
/// the relation layer on the result.
pub fn propagate<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    params: &GraphParams,
    graph: &SceneGraph,
    features: Var,
    steps: usize,
) -> Result<GraphOutput> {
    if steps > params.steps.len() {
        return Err(Error::Argument(format!(
            "{steps} steps requested, {} configured",
            params.steps.len()
        )));
    }
    let shape = tape.shape(features);
    if shape != [graph.num_nodes, NODE_DIM] {
        return Err(Error::Dimension(format!(
            "node features {shape:?} for {} nodes",
            graph.num_nodes
        )));
    }
    let sources = graph.sources();
    let mut g = features;
    for f in &params.steps[..steps] {
        let m = edge_messages(tape, p, f, g, graph)?;
        let agg = aggregate(tape, m, &sources, graph.num_nodes)?;
        g = if params.residual { tape.add(g, agg)? } else { agg };
    }
    let relations = edge_messages(tape, p, &params.relation, g, graph)?;
    Ok(GraphOutput { nodes: g, relations })
}

/// Orientation-bin logits `[E × 6]` for relation features.
pub fn orientation_logits<T: Real>(tape: &mut Tape<T>, p: &Bound, params: &GraphParams, relations: Var) -> Result<Var> {
    params.orientation.forward(tape, p, relations)
}
