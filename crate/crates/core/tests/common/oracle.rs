//! Straight-line re-implementations used as references. Deliberately naive:
//! explicit index loops, no shared helpers with the library.

use gacse::eval::Scorer;
use gacse::graph::InteractionGraph;
use gacse::linalg::Matrix;
use gacse::model::Params;
use gacse::sampling::SimilarityPairSet;

fn lrelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Adjacency of every global node (users first, then items) rebuilt from the edge list.
pub fn adjacency(graph: &InteractionGraph) -> Vec<Vec<usize>> {
    let n = graph.num_users();
    let mut adj = vec![Vec::new(); n + graph.num_items()];
    for (u, i) in graph.edges() {
        adj[u].push(n + i);
        adj[n + i].push(u);
    }
    adj
}

/// e¹ for every node: LeakyReLU(W0 (e⁰_x + Σ e⁰_n / √(|N_x||N_n|))).
pub fn warmup(graph: &InteractionGraph, params: &Params, slope: f64) -> Vec<Vec<f64>> {
    let adj = adjacency(graph);
    let e = &params.embeddings.base;
    let w0 = &params.weights.w0;
    let (d1, d0) = (w0.rows(), w0.cols());
    let mut out = Vec::new();
    for x in 0..adj.len() {
        let mut z = vec![0.0; d0];
        for c in 0..d0 {
            z[c] = e.get(x, c);
        }
        for &nb in &adj[x] {
            let w = 1.0 / ((adj[x].len() * adj[nb].len()) as f64).sqrt();
            for c in 0..d0 {
                z[c] += w * e.get(nb, c);
            }
        }
        let mut h = vec![0.0; d1];
        for r in 0..d1 {
            let mut acc = 0.0;
            for c in 0..d0 {
                acc += w0.get(r, c) * z[c];
            }
            h[r] = lrelu(acc, slope);
        }
        out.push(h);
    }
    out
}

/// Vᵀ tanh(P [a ∥ b]) with an explicit concatenation.
pub fn score(a: &[f64], b: &[f64], p: &Matrix, v: &Matrix) -> f64 {
    let cat: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let mut total = 0.0;
    for r in 0..p.rows() {
        let mut acc = 0.0;
        for c in 0..cat.len() {
            acc += p.get(r, c) * cat[c];
        }
        total += v.get(r, 0) * acc.tanh();
    }
    total
}

/// Attention weights and e² of `node` over the given neighbor nodes.
pub fn attention(e1: &[Vec<f64>], params: &Params, slope: f64, node: usize, neighbors: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let w = &params.weights;
    let scores: Vec<f64> = neighbors.iter().map(|&n| score(&e1[node], &e1[n], &w.p, &w.v)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let pi: Vec<f64> = exps.iter().map(|x| x / z).collect();
    let d1 = e1[node].len();
    let mut s = vec![0.0; d1];
    for (k, &n) in neighbors.iter().enumerate() {
        for c in 0..d1 {
            s[c] += pi[k] * e1[n][c];
        }
    }
    let d3 = w.w1.rows();
    let mut e2 = vec![0.0; d3];
    for r in 0..d3 {
        let (mut a, mut b) = (0.0, 0.0);
        for c in 0..d1 {
            a += w.w1.get(r, c) * (e1[node][c] + s[c]);
            b += w.w2.get(r, c) * (e1[node][c] * s[c]);
        }
        e2[r] = lrelu(a, slope) + lrelu(b, slope);
    }
    (pi, e2)
}

/// e* = e⁰ ∥ e² for every node with full neighborhoods.
pub fn final_embeddings(graph: &InteractionGraph, params: &Params, slope: f64) -> Vec<Vec<f64>> {
    let adj = adjacency(graph);
    let e1 = warmup(graph, params, slope);
    (0..adj.len())
        .map(|x| {
            let (_, e2) = attention(&e1, params, slope, x, &adj[x]);
            let mut v: Vec<f64> = params.embeddings.base.row(x).to_vec();
            v.extend(e2);
            v
        })
        .collect()
}

fn neg_log_sigmoid(x: f64) -> f64 {
    (1.0 + (-x).exp()).ln()
}

/// Σ_anchors [Σ_pos −log σ(⟨e⁰, c_pos⟩) + Σ_neg −log σ(−⟨e⁰, c_neg⟩)] over both sides.
pub fn similarity(params: &Params, users: &[SimilarityPairSet], items: &[SimilarityPairSet]) -> f64 {
    let e = &params.embeddings.base;
    let n = params.num_users();
    let mut total = 0.0;
    for (sets, ctx, offset) in [
        (users, &params.embeddings.user_context, 0),
        (items, &params.embeddings.item_context, n),
    ] {
        for set in sets {
            let dot = |other: usize| {
                let mut acc = 0.0;
                for c in 0..e.cols() {
                    acc += e.get(offset + set.anchor, c) * ctx.get(other, c);
                }
                acc
            };
            for &p in &set.positives {
                total += neg_log_sigmoid(dot(p));
            }
            for &q in &set.negatives {
                total += neg_log_sigmoid(-dot(q));
            }
        }
    }
    total
}

/// Per-user (recall, ndcg) by counting, for each held-out item, how many
/// candidates outrank it.
pub fn user_metrics(scores: &[f64], exclude: &[usize], held_out: &[usize], k: usize) -> Option<(f64, f64)> {
    if held_out.is_empty() {
        return None;
    }
    let mut hits = 0.0;
    let mut dcg = 0.0;
    for &t in held_out {
        if exclude.contains(&t) {
            continue;
        }
        let mut rank = 0;
        for j in 0..scores.len() {
            if j == t || exclude.contains(&j) {
                continue;
            }
            if scores[j] > scores[t] || (scores[j] == scores[t] && j < t) {
                rank += 1;
            }
        }
        if rank < k {
            hits += 1.0;
            dcg += 1.0 / ((rank + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for p in 0..held_out.len().min(k) {
        idcg += 1.0 / ((p + 2) as f64).log2();
    }
    Some((hits / held_out.len() as f64, dcg / idcg))
}

/// Scores held in a plain table: row per user, column per item.
pub struct TableScorer(pub Vec<Vec<f64>>);

impl Scorer for TableScorer {
    fn num_items(&self) -> usize {
        self.0.first().map_or(0, |r| r.len())
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.0[user]);
    }
}
