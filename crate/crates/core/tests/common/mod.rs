#![allow(dead_code)]

pub mod oracle;

use gacse::eval::{per_user_metrics, EvalOptions, EvalSplit};
use gacse::graph::{InteractionGraph, SplitDataset};
use gacse::model::{Dims, Model, ModelConfig, Params, Table};
use gacse::objective::{batch_loss, batch_loss_and_grad, LossConfig};
use gacse::sampling::{MiniBatch, Sampler, SamplingConfig};
use gacse::model::GradientSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random bipartite graph where every user has at least two items and every
/// item at least one user.
pub fn random_graph(users: usize, items: usize, density: f64, rng: &mut ChaCha8Rng) -> InteractionGraph {
    let mut edges = Vec::new();
    for u in 0..users {
        let mut row: Vec<usize> = (0..items).filter(|_| rng.gen_bool(density)).collect();
        while row.len() < 2.min(items) {
            let i = rng.gen_range(0..items);
            if !row.contains(&i) {
                row.push(i);
            }
        }
        edges.extend(row.into_iter().map(|i| (u, i)));
    }
    for i in 0..items {
        if !edges.iter().any(|&(_, j)| j == i) {
            edges.push((rng.gen_range(0..users), i));
        }
    }
    InteractionGraph::from_edges(users, items, &edges).unwrap()
}

/// Model whose tables are uniform in [-scale, scale].
pub fn random_model(dims: Dims, users: usize, items: usize, scale: f64, rng: &mut ChaCha8Rng) -> Model {
    let mut params = Params::zeros(dims, users, items);
    for t in Table::ALL {
        for x in params.table_mut(t).as_mut_slice() {
            *x = rng.gen_range(-scale..=scale);
        }
    }
    Model::from_params(ModelConfig { dims, leaky_slope: 0.2 }, params).unwrap()
}

/// The gradient-check instance: 5 users, 6 items, d*=4, a batch of three
/// triples with fan-in 2 and one similarity anchor per side.
pub fn tiny_instance(seed: u64) -> (InteractionGraph, Model, MiniBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = random_graph(5, 6, 0.5, &mut rng);
    let model = random_model(Dims::uniform(4), 5, 6, 0.8, &mut rng);
    let sampler = Sampler::new(SamplingConfig {
        batch_size: 3,
        fan_in: 2,
        num_pos: 1,
        num_neg: 1,
        ..SamplingConfig::default()
    });
    let mut batch = sampler.sample_batch(&graph, &mut rng).unwrap();
    batch.user_sim.truncate(1);
    batch.item_sim.truncate(1);
    (graph, model, batch)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub entries: usize,
    pub failures: usize,
    pub worst_rel: f64,
}

/// Central differences over every parameter entry, compared with the
/// analytic gradient. Passes an entry when the absolute error is ≤ `abs_tol`
/// or the relative error is ≤ `rel_tol`.
pub fn finite_difference_check(
    graph: &InteractionGraph,
    model: &Model,
    batch: &MiniBatch,
    config: &LossConfig,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> GradCheck {
    let mut grads = GradientSet::zeros_like(&model.params);
    batch_loss_and_grad(model, graph, batch, config, &mut grads).unwrap();
    let mut probe = model.clone();
    let mut out = GradCheck {
        entries: 0,
        failures: 0,
        worst_rel: 0.0,
    };
    for t in Table::ALL {
        let n = model.params.table(t).as_slice().len();
        for k in 0..n {
            let orig = model.params.table(t).as_slice()[k];
            probe.params.table_mut(t).as_mut_slice()[k] = orig + h;
            let up = batch_loss(&probe, graph, batch, config).unwrap().total;
            probe.params.table_mut(t).as_mut_slice()[k] = orig - h;
            let down = batch_loss(&probe, graph, batch, config).unwrap().total;
            probe.params.table_mut(t).as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.table(t).as_slice()[k];
            let abs = (numeric - analytic).abs();
            let rel = abs / numeric.abs().max(analytic.abs()).max(f64::MIN_POSITIVE);
            out.entries += 1;
            if abs > abs_tol && rel > rel_tol {
                out.failures += 1;
                eprintln!("{} [{k}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}", t.name());
            }
            if abs > abs_tol {
                out.worst_rel = out.worst_rel.max(rel);
            }
        }
    }
    out
}

/// Random tiny instance with unequal layer widths, for oracle comparisons.
pub fn oracle_instance(seed: u64) -> (InteractionGraph, Model, MiniBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.gen_range(4..=8);
    let items = rng.gen_range(5..=9);
    let graph = loop {
        // Every user needs at least one negative.
        let g = random_graph(users, items, 0.4, &mut rng);
        if (0..users).all(|u| g.user_degree(u) < items) {
            break g;
        }
    };
    let dims = Dims {
        d0: rng.gen_range(1..=5),
        d1: rng.gen_range(1..=5),
        d2: rng.gen_range(1..=5),
        d3: rng.gen_range(1..=5),
    };
    let model = random_model(dims, users, items, 0.8, &mut rng);
    let sampler = Sampler::new(SamplingConfig {
        batch_size: 4,
        fan_in: rng.gen_range(1..=3),
        num_pos: 2,
        num_neg: 2,
        ..SamplingConfig::default()
    });
    let batch = sampler.sample_batch(&graph, &mut rng).unwrap();
    (graph, model, batch)
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max |library − oracle| over every node's warm-up output.
pub fn warmup_deviation(graph: &InteractionGraph, model: &Model) -> f64 {
    let nodes: Vec<usize> = (0..graph.num_nodes()).collect();
    let lib = model.warmup_forward(graph, &nodes).unwrap();
    let reference = oracle::warmup(graph, &model.params, model.config.leaky_slope);
    nodes.iter().map(|&n| max_dev(lib.row(n), &reference[n])).fold(0.0, f64::max)
}

/// Max deviation of attention weights and e² over the batch's targets.
pub fn attention_deviation(graph: &InteractionGraph, model: &Model, batch: &MiniBatch) -> f64 {
    let trace = model.forward(graph, batch).unwrap();
    let e1 = oracle::warmup(graph, &model.params, model.config.leaky_slope);
    let mut worst: f64 = 0.0;
    for t in trace.targets() {
        let sample = &batch.neighbors[&t.node];
        let neighbors: Vec<usize> = sample
            .neighbors
            .iter()
            .map(|&n| graph.node(sample.side.opposite(), n))
            .collect();
        let (pi, e2) = oracle::attention(&e1, &model.params, model.config.leaky_slope, t.node, &neighbors);
        worst = worst.max(max_dev(&t.weights, &pi)).max(max_dev(&t.e2, &e2));
    }
    worst
}

pub fn similarity_deviation(model: &Model, batch: &MiniBatch) -> f64 {
    let lib = gacse::objective::similarity_loss(&model.params, &batch.user_sim, &batch.item_sim);
    (lib - oracle::similarity(&model.params, &batch.user_sim, &batch.item_sim)).abs()
}

/// Full-neighborhood e* from `embed_all` against the oracle.
pub fn embedding_deviation(graph: &InteractionGraph, model: &Model) -> f64 {
    let lib = model.embed_all(graph).unwrap();
    let reference = oracle::final_embeddings(graph, &model.params, model.config.leaky_slope);
    (0..graph.num_nodes())
        .map(|n| max_dev(lib.table().row(n), &reference[n]))
        .fold(0.0, f64::max)
}

/// Random held-out items per user (some users get none), outside training.
pub fn with_random_test(graph: &InteractionGraph, rng: &mut ChaCha8Rng) -> SplitDataset {
    let mut test = Vec::new();
    for u in 0..graph.num_users() {
        for i in 0..graph.num_items() {
            if !graph.contains(u, i) && rng.gen_bool(0.3) {
                test.push((u, i));
            }
        }
    }
    SplitDataset {
        train: graph.clone(),
        validation: Vec::new(),
        test,
        user_ids: (0..graph.num_users()).map(|u| format!("u{u}")).collect(),
        item_ids: (0..graph.num_items()).map(|i| format!("i{i}")).collect(),
    }
}

/// Max deviation of per-user recall/NDCG between the library and the
/// counting oracle, both fed the oracle's scores; also checks that the same
/// users are skipped.
pub fn metrics_deviation(graph: &InteractionGraph, model: &Model, seed: u64, k: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = with_random_test(graph, &mut rng);
    let n = graph.num_users();
    let e = oracle::final_embeddings(graph, &model.params, model.config.leaky_slope);
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|u| (0..graph.num_items()).map(|i| e[u].iter().zip(&e[n + i]).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let options = EvalOptions {
        k,
        ..EvalOptions::default()
    };
    let lib = per_user_metrics(&oracle::TableScorer(scores.clone()), &ds, EvalSplit::Test, &options).unwrap();
    let held = SplitDataset::group_by_user(&ds.test, n);
    let mut worst: f64 = 0.0;
    for u in 0..n {
        let expect = oracle::user_metrics(&scores[u], graph.user_items(u), &held[u], k);
        match (lib[u], expect) {
            (None, None) => {}
            (Some((r, g)), Some((r2, g2))) => worst = worst.max((r - r2).abs()).max((g - g2).abs()),
            other => panic!("user {u}: skip mismatch {other:?}"),
        }
    }
    worst
}
