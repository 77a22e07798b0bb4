//! Mini-batch construction: BPR triples, fixed fan-in neighbor sets and
//! 2-order similarity pairs from length-2 random walks.
//!
//! Every sampler is a pure function of `(graph, parameters, rng state)`.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{InteractionGraph, Side};
use crate::{Error, Result};

pub const DEFAULT_MAX_RETRIES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub batch_size: usize,
    /// Neighbors kept per node for the attention layer.
    pub fan_in: usize,
    pub num_pos: usize,
    pub num_neg: usize,
    /// Bound for every rejection loop.
    pub max_retries: usize,
    /// Optional cap on warm-up neighborhoods; `None` uses the full neighborhood.
    pub warmup_cap: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            batch_size: 1024,
            fan_in: 64,
            num_pos: 5,
            num_neg: 5,
            max_retries: DEFAULT_MAX_RETRIES,
            warmup_cap: None,
        }
    }
}

/// `(u, i, j)` with `(u, i)` observed and `(u, j)` unobserved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Sampled opposite-side neighbors of one node (S_u or S_i).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSample {
    pub side: Side,
    pub node: usize,
    /// Opposite-side local indices, ascending.
    pub neighbors: Vec<usize>,
    pub fan_in: usize,
}

/// Same-side positives (2-order neighbors) and uniform negatives for one anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimilarityPairSet {
    pub side: Side,
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Set when fewer positives or negatives than requested could be drawn.
    pub short: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MiniBatch {
    pub triples: Vec<TrainTriple>,
    /// Attention neighborhoods keyed by global node id.
    pub neighbors: BTreeMap<usize, NeighborSample>,
    /// Warm-up neighborhoods that were capped, keyed by global node id.
    pub warmup_neighbors: BTreeMap<usize, Vec<usize>>,
    pub user_sim: Vec<SimilarityPairSet>,
    pub item_sim: Vec<SimilarityPairSet>,
}

impl MiniBatch {
    /// Global ids of the nodes whose final embeddings the batch scores:
    /// users, positive items, negative items, deduplicated in first-use order.
    pub fn targets(&self, graph: &InteractionGraph) -> Vec<usize> {
        let mut seen = vec![false; graph.num_nodes()];
        let mut out = Vec::new();
        let mut push = |n: usize| {
            if !seen[n] {
                seen[n] = true;
                out.push(n);
            }
        };
        for t in &self.triples {
            push(graph.node(Side::User, t.user));
            push(graph.node(Side::Item, t.pos));
            push(graph.node(Side::Item, t.neg));
        }
        out
    }
}

/// Uniform users with replacement, a uniform positive per user and a uniform
/// negative drawn by rejection.
pub fn sample_triples<R: Rng + ?Sized>(
    graph: &InteractionGraph,
    batch_size: usize,
    max_retries: usize,
    rng: &mut R,
) -> Result<Vec<TrainTriple>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    if graph.num_users() == 0 || graph.num_items() == 0 {
        return Err(Error::EmptyDataset("graph has no users or items".into()));
    }
    (0..batch_size)
        .map(|_| {
            let user = rng.gen_range(0..graph.num_users());
            let items = graph.user_items(user);
            if items.is_empty() {
                return Err(Error::Sampling(format!("user {user} has no training items")));
            }
            let pos = items[rng.gen_range(0..items.len())];
            let neg = sample_negative(graph, user, max_retries, rng)?;
            Ok(TrainTriple { user, pos, neg })
        })
        .collect()
}

fn sample_negative<R: Rng + ?Sized>(
    graph: &InteractionGraph,
    user: usize,
    max_retries: usize,
    rng: &mut R,
) -> Result<usize> {
    let m = graph.num_items();
    let items = graph.user_items(user);
    if items.len() >= m {
        return Err(Error::Sampling(format!(
            "user {user} interacted with every item; no negative exists"
        )));
    }
    for _ in 0..max_retries.max(1) {
        let j = rng.gen_range(0..m);
        if items.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
    // Retries exhausted on a dense user: draw uniformly from the complement.
    let k = rng.gen_range(0..m - items.len());
    let mut seen = 0;
    for j in 0..m {
        if items.binary_search(&j).is_err() {
            if seen == k {
                return Ok(j);
            }
            seen += 1;
        }
    }
    unreachable!("complement has {} items", m - items.len())
}

/// Full neighborhood when `degree <= fan_in`, otherwise a uniform sample of
/// `fan_in` neighbors without replacement.
pub fn sample_neighbors<R: Rng + ?Sized>(
    graph: &InteractionGraph,
    side: Side,
    node: usize,
    fan_in: usize,
    rng: &mut R,
) -> Result<NeighborSample> {
    let all = graph.neighbors(side, node);
    if all.is_empty() {
        return Err(Error::Sampling(format!("{side:?} {node} has no neighbors")));
    }
    if fan_in == 0 {
        return Err(Error::InvalidArgument("fan_in must be at least 1".into()));
    }
    let neighbors = if all.len() <= fan_in {
        all.to_vec()
    } else {
        let mut picked: Vec<usize> = index::sample(rng, all.len(), fan_in).into_iter().map(|k| all[k]).collect();
        picked.sort_unstable();
        picked
    };
    Ok(NeighborSample {
        side,
        node,
        neighbors,
        fan_in,
    })
}

/// Positives from length-2 walks `anchor → opposite neighbor → same-side node`
/// (walks returning to the anchor are redrawn, at most `max_retries` times per
/// positive); negatives uniform over the anchor's side excluding the anchor.
pub fn sample_similarity_pairs<R: Rng + ?Sized>(
    graph: &InteractionGraph,
    side: Side,
    anchor: usize,
    num_pos: usize,
    num_neg: usize,
    max_retries: usize,
    rng: &mut R,
) -> Result<SimilarityPairSet> {
    let hop1 = graph.neighbors(side, anchor);
    if hop1.is_empty() {
        return Err(Error::Sampling(format!("{side:?} {anchor} has no neighbors")));
    }
    let mut positives = Vec::with_capacity(num_pos);
    for _ in 0..num_pos {
        for _ in 0..max_retries.max(1) {
            let mid = hop1[rng.gen_range(0..hop1.len())];
            let hop2 = graph.neighbors(side.opposite(), mid);
            let end = hop2[rng.gen_range(0..hop2.len())];
            if end != anchor {
                positives.push(end);
                break;
            }
        }
    }
    let population = graph.num_on(side);
    let mut negatives = Vec::with_capacity(num_neg);
    if population > 1 {
        for _ in 0..num_neg {
            for _ in 0..max_retries.max(1) {
                let n = rng.gen_range(0..population);
                if n != anchor {
                    negatives.push(n);
                    break;
                }
            }
        }
    }
    let short = positives.len() < num_pos || negatives.len() < num_neg;
    Ok(SimilarityPairSet {
        side,
        anchor,
        positives,
        negatives,
        short,
    })
}

/// Draws complete mini-batches.
#[derive(Clone, Debug, Default)]
pub struct Sampler {
    pub config: SamplingConfig,
}

impl Sampler {
    pub fn new(config: SamplingConfig) -> Self {
        Sampler { config }
    }

    /// Triples, then one attention neighborhood per target node, then
    /// similarity pairs anchored on the batch's distinct users and distinct
    /// positive items.
    pub fn sample_batch<R: Rng + ?Sized>(&self, graph: &InteractionGraph, rng: &mut R) -> Result<MiniBatch> {
        let c = &self.config;
        let triples = sample_triples(graph, c.batch_size, c.max_retries, rng)?;
        let mut batch = MiniBatch {
            triples,
            ..MiniBatch::default()
        };
        let targets = batch.targets(graph);
        for &node in &targets {
            let (side, idx) = graph.locate(node);
            let sample = sample_neighbors(graph, side, idx, c.fan_in, rng)?;
            batch.neighbors.insert(node, sample);
        }
        if let Some(cap) = c.warmup_cap {
            // Every node whose warm-up embedding the forward pass needs.
            let mut needed: Vec<usize> = targets.clone();
            for s in batch.neighbors.values() {
                needed.extend(s.neighbors.iter().map(|&n| graph.node(s.side.opposite(), n)));
            }
            needed.sort_unstable();
            needed.dedup();
            for node in needed {
                let (side, idx) = graph.locate(node);
                if graph.degree(side, idx) > cap {
                    let s = sample_neighbors(graph, side, idx, cap, rng)?;
                    batch.warmup_neighbors.insert(node, s.neighbors);
                }
            }
        }

        let mut users: Vec<usize> = Vec::new();
        let mut items: Vec<usize> = Vec::new();
        let mut seen_u = vec![false; graph.num_users()];
        let mut seen_i = vec![false; graph.num_items()];
        for t in &batch.triples {
            if !seen_u[t.user] {
                seen_u[t.user] = true;
                users.push(t.user);
            }
            if !seen_i[t.pos] {
                seen_i[t.pos] = true;
                items.push(t.pos);
            }
        }
        for u in users {
            batch
                .user_sim
                .push(sample_similarity_pairs(graph, Side::User, u, c.num_pos, c.num_neg, c.max_retries, rng)?);
        }
        for i in items {
            batch
                .item_sim
                .push(sample_similarity_pairs(graph, Side::Item, i, c.num_pos, c.num_neg, c.max_retries, rng)?);
        }
        Ok(batch)
    }
}
