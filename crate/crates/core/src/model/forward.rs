use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::{Model, PropagationWeights};
use crate::graph::{InteractionGraph, Side};
use crate::linalg::{self, dot, leaky_relu, Matrix};
use crate::sampling::{MiniBatch, NeighborSample};
use crate::{Error, Result};

/// Symmetric warm-up propagation weight `1 / √(deg_u · deg_i)`.
pub fn warmup_weight(deg_u: usize, deg_i: usize) -> Result<f64> {
    if deg_u == 0 || deg_i == 0 {
        return Err(Error::InvalidArgument(format!(
            "warm-up weight needs positive degrees, got ({deg_u}, {deg_i})"
        )));
    }
    Ok(1.0 / ((deg_u as f64) * (deg_i as f64)).sqrt())
}

/// `Vᵀ · tanh(P · [e1_u ∥ e1_i])`.
pub fn attention_score(e1_u: &[f64], e1_i: &[f64], p: &Matrix, v: &Matrix) -> f64 {
    let mut joined = Vec::with_capacity(e1_u.len() + e1_i.len());
    joined.extend_from_slice(e1_u);
    joined.extend_from_slice(e1_i);
    let mut hidden = vec![0.0; p.rows()];
    p.matvec(&joined, &mut hidden);
    hidden.iter().zip(v.as_slice()).map(|(h, w)| h.tanh() * w).sum()
}

/// Softmax over one node's neighbor scores.
pub fn attention_normalize(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("attention over an empty neighbor set".into()));
    }
    let mut out = vec![0.0; scores.len()];
    linalg::softmax(scores, &mut out);
    Ok(out)
}

/// `LeakyReLU(W1 · (e1 + s)) + LeakyReLU(W2 · (e1 ⊙ s))` with `s = Σ π_n e1_n`.
pub fn attention_aggregate(
    e1_node: &[f64],
    neighbor_e1s: &[&[f64]],
    weights: &[f64],
    w1: &Matrix,
    w2: &Matrix,
    leaky_slope: f64,
) -> Vec<f64> {
    let mut s = vec![0.0; e1_node.len()];
    for (e, &pi) in neighbor_e1s.iter().zip(weights) {
        linalg::axpy(pi, e, &mut s);
    }
    combine(e1_node, &s, w1, w2, leaky_slope).2
}

fn combine(e1: &[f64], s: &[f64], w1: &Matrix, w2: &Matrix, slope: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let sum_in: Vec<f64> = e1.iter().zip(s).map(|(a, b)| a + b).collect();
    let prod_in: Vec<f64> = e1.iter().zip(s).map(|(a, b)| a * b).collect();
    let mut sum_pre = vec![0.0; w1.rows()];
    let mut prod_pre = vec![0.0; w2.rows()];
    w1.matvec(&sum_in, &mut sum_pre);
    w2.matvec(&prod_in, &mut prod_pre);
    let e2 = sum_pre
        .iter()
        .zip(&prod_pre)
        .map(|(&a, &b)| leaky_relu(a, slope) + leaky_relu(b, slope))
        .collect();
    (sum_pre, prod_pre, e2)
}

/// `y_ab = ⟨e⁰_a ∥ e²_a, e⁰_b ∥ e²_b⟩`.
#[inline]
pub fn predict(e0_a: &[f64], e2_a: &[f64], e0_b: &[f64], e2_b: &[f64]) -> f64 {
    dot(e0_a, e0_b) + dot(e2_a, e2_b)
}

/// Cached activations of one attention-layer node.
#[derive(Clone, Debug)]
pub struct TargetTrace {
    pub node: usize,
    pub(crate) slot: usize,
    pub(crate) neighbor_slots: Vec<usize>,
    /// `tanh(P·[e1_x ∥ e1_n])`, one d2 row per neighbor.
    pub(crate) hidden: Vec<f64>,
    /// Attention weights π over the sampled neighbors.
    pub weights: Vec<f64>,
    pub(crate) agg: Vec<f64>,
    pub(crate) sum_pre: Vec<f64>,
    pub(crate) prod_pre: Vec<f64>,
    pub e2: Vec<f64>,
}

/// Everything a batch forward pass computed, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub(crate) warm_nodes: Vec<usize>,
    pub(crate) warm_slot: HashMap<usize, usize>,
    pub(crate) warm_agg: Matrix,
    pub(crate) warm_pre: Matrix,
    pub(crate) e1: Matrix,
    pub(crate) targets: Vec<TargetTrace>,
    pub(crate) target_slot: HashMap<usize, usize>,
}

impl ForwardTrace {
    pub fn targets(&self) -> &[TargetTrace] {
        &self.targets
    }

    pub fn target(&self, node: usize) -> Option<&TargetTrace> {
        self.target_slot.get(&node).map(|&k| &self.targets[k])
    }

    pub fn target_index(&self, node: usize) -> Option<usize> {
        self.target_slot.get(&node).copied()
    }

    /// Warm-up output `e¹` of a node touched by this pass.
    pub fn e1(&self, node: usize) -> Option<&[f64]> {
        self.warm_slot.get(&node).map(|&s| self.e1.row(s))
    }

    pub fn e2(&self, node: usize) -> Option<&[f64]> {
        self.target(node).map(|t| t.e2.as_slice())
    }

    pub fn warm_nodes(&self) -> &[usize] {
        &self.warm_nodes
    }
}

/// `e* = e⁰ ∥ e²` for every node, computed with full neighborhoods.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalEmbeddings {
    num_users: usize,
    num_items: usize,
    table: Matrix,
}

impl FinalEmbeddings {
    pub fn new(num_users: usize, num_items: usize, table: Matrix) -> Self {
        assert_eq!(table.rows(), num_users + num_items);
        FinalEmbeddings {
            num_users,
            num_items,
            table,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn user(&self, u: usize) -> &[f64] {
        self.table.row(u)
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.table.row(self.num_users + i)
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }
}

/// Warm-up neighbor list of a node plus the multiplier applied to every π⁰
/// (1 for the full neighborhood, `deg / |sample|` for a capped sample).
pub(crate) fn warm_neighbors<'a>(
    graph: &'a InteractionGraph,
    capped: &'a BTreeMap<usize, Vec<usize>>,
    node: usize,
) -> (Side, usize, &'a [usize], f64) {
    let (side, idx) = graph.locate(node);
    let all = graph.neighbors(side, idx);
    match capped.get(&node) {
        Some(sample) if !sample.is_empty() => (side, idx, sample, all.len() as f64 / sample.len() as f64),
        _ => (side, idx, all, 1.0),
    }
}

impl Model {
    fn warm_row(
        &self,
        graph: &InteractionGraph,
        capped: &BTreeMap<usize, Vec<usize>>,
        node: usize,
        agg: &mut [f64],
        pre: &mut [f64],
        e1: &mut [f64],
    ) {
        let base = &self.params.embeddings.base;
        let (side, idx, neighbors, scale) = warm_neighbors(graph, capped, node);
        let deg = graph.degree(side, idx) as f64;
        agg.copy_from_slice(base.row(node));
        let other = side.opposite();
        for &n in neighbors {
            let pi = scale / (deg * graph.degree(other, n) as f64).sqrt();
            linalg::axpy(pi, base.row(graph.node(other, n)), agg);
        }
        self.params.weights.w0.matvec(agg, pre);
        let slope = self.config.leaky_slope;
        for (o, &z) in e1.iter_mut().zip(pre.iter()) {
            *o = leaky_relu(z, slope);
        }
    }

    /// Warm-up outputs `e¹` for `nodes` (global ids), full neighborhoods.
    pub fn warmup_forward(&self, graph: &InteractionGraph, nodes: &[usize]) -> Result<Matrix> {
        self.check_graph(graph)?;
        for &n in nodes {
            let (side, idx) = graph.locate(n);
            if graph.degree(side, idx) == 0 {
                return Err(Error::InvalidArgument(format!("{side:?} {idx} is isolated")));
            }
        }
        let (agg, pre, e1) = self.warm_tables(graph, &BTreeMap::new(), nodes);
        drop((agg, pre));
        Ok(e1)
    }

    fn warm_tables(
        &self,
        graph: &InteractionGraph,
        capped: &BTreeMap<usize, Vec<usize>>,
        nodes: &[usize],
    ) -> (Matrix, Matrix, Matrix) {
        let d = self.dims();
        let mut agg = Matrix::zeros(nodes.len(), d.d0);
        let mut pre = Matrix::zeros(nodes.len(), d.d1);
        let mut e1 = Matrix::zeros(nodes.len(), d.d1);
        agg.as_mut_slice()
            .par_chunks_mut(d.d0)
            .zip(pre.as_mut_slice().par_chunks_mut(d.d1))
            .zip(e1.as_mut_slice().par_chunks_mut(d.d1))
            .zip(nodes.par_iter())
            .for_each(|(((a, p), e), &node)| self.warm_row(graph, capped, node, a, p, e));
        (agg, pre, e1)
    }

    pub(crate) fn check_graph(&self, graph: &InteractionGraph) -> Result<()> {
        if graph.num_users() != self.num_users() || graph.num_items() != self.num_items() {
            return Err(Error::Shape(format!(
                "model has {} users / {} items, graph has {} / {}",
                self.num_users(),
                self.num_items(),
                graph.num_users(),
                graph.num_items()
            )));
        }
        Ok(())
    }

    /// Attention layer for one node. `center_proj = P_left · e1_x`, and each
    /// neighbor comes with `P_right · e1_n`.
    fn attend<'a>(
        &self,
        e1_x: &[f64],
        center_proj: &[f64],
        neighbors: impl ExactSizeIterator<Item = (&'a [f64], &'a [f64])> + Clone,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let w: &PropagationWeights = &self.params.weights;
        let d2 = w.p.rows();
        let k = neighbors.len();
        let mut hidden = vec![0.0; k * d2];
        let mut scores = vec![0.0; k];
        for ((h, score), (_, proj)) in hidden.chunks_exact_mut(d2).zip(scores.iter_mut()).zip(neighbors.clone()) {
            for ((hv, &c), &r) in h.iter_mut().zip(center_proj).zip(proj) {
                *hv = (c + r).tanh();
            }
            *score = dot(h, w.v.as_slice());
        }
        let mut weights = vec![0.0; k];
        linalg::softmax(&scores, &mut weights);
        let mut agg = vec![0.0; e1_x.len()];
        for ((e1_n, _), &pi) in neighbors.zip(&weights) {
            linalg::axpy(pi, e1_n, &mut agg);
        }
        let (sum_pre, prod_pre, e2) = combine(e1_x, &agg, &w.w1, &w.w2, self.config.leaky_slope);
        (hidden, weights, agg, sum_pre, prod_pre, e2)
    }

    fn projections(&self, e1: &Matrix) -> (Matrix, Matrix) {
        let p = &self.params.weights.p;
        let (d1, d2) = (e1.cols(), p.rows());
        let mut left = Matrix::zeros(e1.rows(), d2);
        let mut right = Matrix::zeros(e1.rows(), d2);
        left.as_mut_slice()
            .par_chunks_mut(d2)
            .zip(right.as_mut_slice().par_chunks_mut(d2))
            .zip(e1.as_slice().par_chunks(d1))
            .for_each(|((l, r), x)| {
                p.matvec_block(0, x, l);
                p.matvec_block(d1, x, r);
            });
        (left, right)
    }

    /// Forward pass over a sampled mini-batch.
    pub fn forward(&self, graph: &InteractionGraph, batch: &MiniBatch) -> Result<ForwardTrace> {
        let targets = batch.targets(graph);
        self.forward_targets(graph, &targets, &batch.neighbors, &batch.warmup_neighbors)
    }

    /// Forward pass for explicit target nodes (global ids), each of which
    /// must have an entry in `attention`.
    pub fn forward_targets(
        &self,
        graph: &InteractionGraph,
        targets: &[usize],
        attention: &BTreeMap<usize, NeighborSample>,
        warmup_capped: &BTreeMap<usize, Vec<usize>>,
    ) -> Result<ForwardTrace> {
        self.check_graph(graph)?;
        let mut warm_nodes = Vec::new();
        let mut warm_slot = HashMap::new();
        let mut slot_of = |n: usize, warm_nodes: &mut Vec<usize>| {
            *warm_slot.entry(n).or_insert_with(|| {
                warm_nodes.push(n);
                warm_nodes.len() - 1
            })
        };
        let mut plan = Vec::with_capacity(targets.len());
        for &node in targets {
            let sample = attention
                .get(&node)
                .ok_or_else(|| Error::InvalidArgument(format!("no neighbor sample for node {node}")))?;
            let (side, idx) = graph.locate(node);
            if sample.side != side || sample.node != idx {
                return Err(Error::InvalidArgument(format!("neighbor sample for node {node} is mislabelled")));
            }
            if sample.neighbors.is_empty() {
                return Err(Error::InvalidArgument(format!("empty neighbor sample for node {node}")));
            }
            let slot = slot_of(node, &mut warm_nodes);
            let neighbor_slots: Vec<usize> = sample
                .neighbors
                .iter()
                .map(|&n| slot_of(graph.node(side.opposite(), n), &mut warm_nodes))
                .collect();
            plan.push((node, slot, neighbor_slots));
        }
        let warm_slot: HashMap<usize, usize> = warm_nodes.iter().enumerate().map(|(s, &n)| (n, s)).collect();
        for &n in &warm_nodes {
            let (side, idx) = graph.locate(n);
            if graph.degree(side, idx) == 0 {
                return Err(Error::InvalidArgument(format!("{side:?} {idx} is isolated")));
            }
        }

        let (warm_agg, warm_pre, e1) = self.warm_tables(graph, warmup_capped, &warm_nodes);
        let (left, right) = self.projections(&e1);
        let traces: Vec<TargetTrace> = plan
            .into_par_iter()
            .map(|(node, slot, neighbor_slots)| {
                let nbrs = neighbor_slots.iter().map(|&s| (e1.row(s), right.row(s)));
                let (hidden, weights, agg, sum_pre, prod_pre, e2) = self.attend(e1.row(slot), left.row(slot), nbrs);
                TargetTrace {
                    node,
                    slot,
                    neighbor_slots,
                    hidden,
                    weights,
                    agg,
                    sum_pre,
                    prod_pre,
                    e2,
                }
            })
            .collect();
        let target_slot = traces.iter().enumerate().map(|(k, t)| (t.node, k)).collect();
        Ok(ForwardTrace {
            warm_nodes,
            warm_slot,
            warm_agg,
            warm_pre,
            e1,
            targets: traces,
            target_slot,
        })
    }

    /// Deterministic full-neighborhood embeddings `e*` for every node.
    pub fn embed_all(&self, graph: &InteractionGraph) -> Result<FinalEmbeddings> {
        self.check_graph(graph)?;
        let d = self.dims();
        let nodes: Vec<usize> = (0..graph.num_nodes()).collect();
        let (_, _, e1) = self.warm_tables(graph, &BTreeMap::new(), &nodes);
        let (left, right) = self.projections(&e1);
        let base = &self.params.embeddings.base;
        let width = d.final_dim();
        let mut table = Matrix::zeros(graph.num_nodes(), width);
        table
            .as_mut_slice()
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(node, out)| {
                out[..d.d0].copy_from_slice(base.row(node));
                let (side, idx) = graph.locate(node);
                let other = side.opposite();
                let neighbors = graph.neighbors(side, idx);
                if neighbors.is_empty() {
                    // Isolated nodes get e² from an empty neighborhood sum.
                    let zero = vec![0.0; d.d1];
                    let w = &self.params.weights;
                    let (_, _, e2) = combine(e1.row(node), &zero, &w.w1, &w.w2, self.config.leaky_slope);
                    out[d.d0..].copy_from_slice(&e2);
                    return;
                }
                let nbrs = neighbors.iter().map(|&n| {
                    let g = graph.node(other, n);
                    (e1.row(g), right.row(g))
                });
                let (.., e2) = self.attend(e1.row(node), left.row(node), nbrs);
                out[d.d0..].copy_from_slice(&e2);
            });
        Ok(FinalEmbeddings::new(graph.num_users(), graph.num_items(), table))
    }
}
