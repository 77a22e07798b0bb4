//! Batch objective: adaptive-margin BPR + λ1 · similarity + λ2 · ‖Θ‖².
//!
//! Per triple the ranking term is `softplus(−(y_ui − y_uj − max(0, y_ij)))`,
//! averaged over the batch. The similarity term is a plain sum over anchors of
//! `−log σ(⟨e⁰_a, c_pos⟩) − log σ(−⟨e⁰_a, c_neg⟩)` where `c` rows come from the
//! context table of the anchor's side.

use serde::{Deserialize, Serialize};

use crate::graph::{InteractionGraph, Side};
use crate::linalg::{dot, axpy, sigmoid, softplus, Matrix};
use crate::model::{predict, ForwardTrace, GradientSet, Model, Params, Table};
use crate::sampling::{MiniBatch, SimilarityPairSet};
use crate::Result;

/// Sign convention of the ranking term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BprForm {
    /// `softplus(−Δ)`, bounded below by 0.
    #[default]
    Corrected,
    /// `−softplus(Δ)` exactly as typeset in the original write-up. Unbounded
    /// below; only kept so the two forms can be compared.
    Literal,
}

/// Which embedding rows receive the L2 gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Scope {
    /// Every row of every table: the exact gradient of λ2‖Θ‖².
    Full,
    /// Dense weights plus only the embedding rows the batch touched.
    #[default]
    Touched,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Drop the similarity term entirely.
    pub no_similarity: bool,
    /// Replace the adaptive margin `max(0, y_ij)` by 0.
    pub no_adaptive_margin: bool,
    /// Treat the margin as a constant during differentiation.
    pub detach_margin: bool,
    pub bpr_form: BprForm,
    pub l2_scope: L2Scope,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 1e-4,
            lambda2: 1e-5,
            no_similarity: false,
            no_adaptive_margin: false,
            detach_margin: true,
            bpr_form: BprForm::Corrected,
            l2_scope: L2Scope::Touched,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub similarity: f64,
    pub l2: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    pub fn new(bpr: f64, similarity: f64, l2: f64, lambda1: f64, lambda2: f64) -> Self {
        LossBreakdown {
            bpr,
            similarity,
            l2,
            total: bpr + lambda1 * similarity + lambda2 * l2,
            lambda1,
            lambda2,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bpr.is_finite() && self.similarity.is_finite() && self.l2.is_finite() && self.total.is_finite()
    }
}

/// Per-triple ranking loss `softplus(−(y_ui − y_uj − max(0, y_ij)))`.
pub fn bpr_adaptive_margin(y_ui: f64, y_uj: f64, y_ij: f64) -> f64 {
    softplus(-(y_ui - y_uj - y_ij.max(0.0)))
}

/// Value and partials `(∂/∂y_ui, ∂/∂y_uj, ∂/∂y_ij)` of one triple's term.
pub fn bpr_term(y_ui: f64, y_uj: f64, y_ij: f64, config: &LossConfig) -> (f64, f64, f64, f64) {
    let adaptive = !config.no_adaptive_margin;
    let margin = if adaptive { y_ij.max(0.0) } else { 0.0 };
    let delta = y_ui - y_uj - margin;
    let (loss, d_delta) = match config.bpr_form {
        BprForm::Corrected => (softplus(-delta), -sigmoid(-delta)),
        BprForm::Literal => (-softplus(delta), -sigmoid(delta)),
    };
    let d_ij = if adaptive && !config.detach_margin && y_ij > 0.0 {
        -d_delta
    } else {
        0.0
    };
    (loss, d_delta, -d_delta, d_ij)
}

fn context_table(params: &Params, side: Side) -> &Matrix {
    match side {
        Side::User => &params.embeddings.user_context,
        Side::Item => &params.embeddings.item_context,
    }
}

fn anchor_row(params: &Params, set: &SimilarityPairSet) -> usize {
    match set.side {
        Side::User => set.anchor,
        Side::Item => params.num_users() + set.anchor,
    }
}

/// Sum of similarity terms over all anchors of both sides.
pub fn similarity_loss(params: &Params, user_pairs: &[SimilarityPairSet], item_pairs: &[SimilarityPairSet]) -> f64 {
    let mut total = 0.0;
    for set in user_pairs.iter().chain(item_pairs) {
        let anchor = params.embeddings.base.row(anchor_row(params, set));
        let ctx = context_table(params, set.side);
        for &p in &set.positives {
            total += softplus(-dot(anchor, ctx.row(p)));
        }
        for &n in &set.negatives {
            total += softplus(dot(anchor, ctx.row(n)));
        }
    }
    total
}

fn similarity_grad(params: &Params, sets: &[SimilarityPairSet], scale: f64, grads: &mut GradientSet) {
    for set in sets {
        let row = anchor_row(params, set);
        let anchor = params.embeddings.base.row(row);
        let ctx = context_table(params, set.side);
        let terms = set
            .positives
            .iter()
            .map(|&p| (p, true))
            .chain(set.negatives.iter().map(|&n| (n, false)));
        for (c, positive) in terms {
            let x = dot(anchor, ctx.row(c));
            let g = scale * if positive { -sigmoid(-x) } else { sigmoid(x) };
            axpy(g, ctx.row(c), grads.base.row_mut(row));
            let ctx_grad = match set.side {
                Side::User => grads.user_context.row_mut(c),
                Side::Item => grads.item_context.row_mut(c),
            };
            axpy(g, anchor, ctx_grad);
        }
    }
}

/// ‖Θ‖² over every trainable table.
pub fn l2_penalty(params: &Params) -> f64 {
    params.sum_squares()
}

fn l2_grad(params: &Params, lambda2: f64, scope: L2Scope, grads: &mut GradientSet) {
    let c = 2.0 * lambda2;
    for table in Table::ALL {
        let theta = params.table(table);
        if let Some(rows) = grads.rows_mut(table) {
            if scope == L2Scope::Full {
                rows.touch_all();
            }
            let touched = rows.touched().to_vec();
            for r in touched {
                axpy(c, theta.row(r), rows.row_mut(r));
            }
        } else if let Some(dense) = grads.dense_mut(table) {
            axpy(c, theta.as_slice(), dense.as_mut_slice());
        }
    }
}

struct Scored {
    bpr: f64,
    upstream_e0: Matrix,
    upstream_e2: Matrix,
}

fn score_triples(model: &Model, graph: &InteractionGraph, batch: &MiniBatch, trace: &ForwardTrace, config: &LossConfig, want_grad: bool) -> Scored {
    let d = model.dims();
    let k = trace.targets().len();
    let (mut up0, mut up2) = if want_grad {
        (Matrix::zeros(k, d.d0), Matrix::zeros(k, d.d3))
    } else {
        (Matrix::zeros(0, d.d0), Matrix::zeros(0, d.d3))
    };
    let base = &model.params.embeddings.base;
    let inv_b = 1.0 / batch.triples.len() as f64;
    let mut bpr = 0.0;
    for t in &batch.triples {
        let nodes = [
            graph.node(Side::User, t.user),
            graph.node(Side::Item, t.pos),
            graph.node(Side::Item, t.neg),
        ];
        let slot = nodes.map(|n| trace.target_index(n).expect("triple node missing from trace"));
        let e0 = nodes.map(|n| base.row(n));
        let e2 = slot.map(|s| trace.targets()[s].e2.as_slice());
        let y_ui = predict(e0[0], e2[0], e0[1], e2[1]);
        let y_uj = predict(e0[0], e2[0], e0[2], e2[2]);
        let y_ij = predict(e0[1], e2[1], e0[2], e2[2]);
        let (loss, d_ui, d_uj, d_ij) = bpr_term(y_ui, y_uj, y_ij, config);
        bpr += loss * inv_b;
        if !want_grad {
            continue;
        }
        for ((a, b), g) in [((0, 1), d_ui), ((0, 2), d_uj), ((1, 2), d_ij)] {
            if g == 0.0 {
                continue;
            }
            let g = g * inv_b;
            axpy(g, e0[b], up0.row_mut(slot[a]));
            axpy(g, e0[a], up0.row_mut(slot[b]));
            axpy(g, e2[b], up2.row_mut(slot[a]));
            axpy(g, e2[a], up2.row_mut(slot[b]));
        }
    }
    Scored {
        bpr,
        upstream_e0: up0,
        upstream_e2: up2,
    }
}

fn check_batch(batch: &MiniBatch) -> Result<()> {
    if batch.triples.is_empty() {
        return Err(crate::Error::InvalidArgument("mini-batch has no triples".into()));
    }
    Ok(())
}

/// Loss value of a batch, no gradients.
pub fn batch_loss(model: &Model, graph: &InteractionGraph, batch: &MiniBatch, config: &LossConfig) -> Result<LossBreakdown> {
    check_batch(batch)?;
    let trace = model.forward(graph, batch)?;
    let scored = score_triples(model, graph, batch, &trace, config, false);
    let similarity = if config.no_similarity {
        0.0
    } else {
        similarity_loss(&model.params, &batch.user_sim, &batch.item_sim)
    };
    Ok(LossBreakdown::new(
        scored.bpr,
        similarity,
        l2_penalty(&model.params),
        config.lambda1,
        config.lambda2,
    ))
}

/// Loss value of a batch with its gradient accumulated into `grads`.
pub fn batch_loss_and_grad(
    model: &Model,
    graph: &InteractionGraph,
    batch: &MiniBatch,
    config: &LossConfig,
    grads: &mut GradientSet,
) -> Result<LossBreakdown> {
    check_batch(batch)?;
    let trace = model.forward(graph, batch)?;
    let scored = score_triples(model, graph, batch, &trace, config, true);
    model.backward(
        graph,
        &batch.warmup_neighbors,
        &trace,
        &scored.upstream_e0,
        &scored.upstream_e2,
        grads,
    )?;
    let similarity = if config.no_similarity {
        0.0
    } else {
        if config.lambda1 != 0.0 {
            similarity_grad(&model.params, &batch.user_sim, config.lambda1, grads);
            similarity_grad(&model.params, &batch.item_sim, config.lambda1, grads);
        }
        similarity_loss(&model.params, &batch.user_sim, &batch.item_sim)
    };
    if config.lambda2 != 0.0 {
        l2_grad(&model.params, config.lambda2, config.l2_scope, grads);
    }
    Ok(LossBreakdown::new(
        scored.bpr,
        similarity,
        l2_penalty(&model.params),
        config.lambda1,
        config.lambda2,
    ))
}
