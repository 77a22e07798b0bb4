use std::collections::BTreeMap;

use super::forward::warm_neighbors;
use super::{ForwardTrace, GradientSet, Model};
use crate::graph::InteractionGraph;
use crate::linalg::{self, leaky_relu_grad, Matrix};
use crate::{Error, Result};

impl Model {
    /// Reverse mode through prediction inputs, attention and warm-up layers.
    ///
    /// `upstream_e0` and `upstream_e2` hold ∂L/∂e⁰ and ∂L/∂e² for each target
    /// of `trace`, row `k` matching `trace.targets()[k]`. Gradients are
    /// accumulated into `grads`; only rows reached by the batch are touched.
    pub fn backward(
        &self,
        graph: &InteractionGraph,
        warmup_capped: &BTreeMap<usize, Vec<usize>>,
        trace: &ForwardTrace,
        upstream_e0: &Matrix,
        upstream_e2: &Matrix,
        grads: &mut GradientSet,
    ) -> Result<()> {
        let d = self.dims();
        let k = trace.targets.len();
        if upstream_e0.shape() != (k, d.d0) || upstream_e2.shape() != (k, d.d3) {
            return Err(Error::Shape(format!(
                "upstream gradients are {:?} and {:?}, expected ({k}, {}) and ({k}, {})",
                upstream_e0.shape(),
                upstream_e2.shape(),
                d.d0,
                d.d3
            )));
        }
        if grads.base.matrix().shape() != self.params.embeddings.base.shape() || grads.w0.shape() != self.params.weights.w0.shape() {
            return Err(Error::Shape("gradient set does not match model parameters".into()));
        }

        let slope = self.config.leaky_slope;
        let w = &self.params.weights;
        let d2 = d.d2;
        let mut de1 = Matrix::zeros(trace.warm_nodes.len(), d.d1);

        let mut d_sum_pre = vec![0.0; d.d3];
        let mut d_prod_pre = vec![0.0; d.d3];
        let mut d_sum_in = vec![0.0; d.d1];
        let mut d_prod_in = vec![0.0; d.d1];
        let mut d_agg = vec![0.0; d.d1];
        let mut dc = vec![0.0; d2];
        let mut dc_total = vec![0.0; d2];
        let mut scratch = vec![0.0; d.d1];

        for (t, target) in trace.targets.iter().enumerate() {
            let g0 = upstream_e0.row(t);
            if g0.iter().any(|&x| x != 0.0) {
                linalg::axpy(1.0, g0, grads.base.row_mut(target.node));
            }
            let g2 = upstream_e2.row(t);
            if g2.iter().all(|&x| x == 0.0) {
                continue;
            }

            let e1_x = trace.e1.row(target.slot);
            let agg = &target.agg;
            for r in 0..d.d3 {
                d_sum_pre[r] = g2[r] * leaky_relu_grad(target.sum_pre[r], slope);
                d_prod_pre[r] = g2[r] * leaky_relu_grad(target.prod_pre[r], slope);
            }
            let sum_in: Vec<f64> = e1_x.iter().zip(agg).map(|(a, b)| a + b).collect();
            let prod_in: Vec<f64> = e1_x.iter().zip(agg).map(|(a, b)| a * b).collect();
            grads.w1.add_outer(&d_sum_pre, &sum_in);
            grads.w2.add_outer(&d_prod_pre, &prod_in);
            d_sum_in.fill(0.0);
            d_prod_in.fill(0.0);
            w.w1.matvec_t_acc(&d_sum_pre, &mut d_sum_in);
            w.w2.matvec_t_acc(&d_prod_pre, &mut d_prod_in);

            // ∂/∂e1_x through the self terms, and ∂/∂s.
            {
                let row = de1.row_mut(target.slot);
                for c in 0..d.d1 {
                    row[c] += d_sum_in[c] + d_prod_in[c] * agg[c];
                    d_agg[c] = d_sum_in[c] + d_prod_in[c] * e1_x[c];
                }
            }

            // s = Σ π_n e1_n.
            let dpi: Vec<f64> = target
                .neighbor_slots
                .iter()
                .map(|&s| linalg::dot(&d_agg, trace.e1.row(s)))
                .collect();
            let mean: f64 = dpi.iter().zip(&target.weights).map(|(g, p)| g * p).sum();

            dc_total.fill(0.0);
            for (n, &s) in target.neighbor_slots.iter().enumerate() {
                let pi = target.weights[n];
                let e1_n = trace.e1.row(s).to_vec();
                linalg::axpy(pi, &d_agg, de1.row_mut(s));

                let d_score = pi * (dpi[n] - mean);
                if d_score == 0.0 {
                    continue;
                }
                let h = &target.hidden[n * d2..(n + 1) * d2];
                linalg::axpy(d_score, h, grads.v.as_mut_slice());
                for r in 0..d2 {
                    dc[r] = d_score * w.v.as_slice()[r] * (1.0 - h[r] * h[r]);
                    dc_total[r] += dc[r];
                }
                grads.p.add_outer_block(d.d1, &dc, &e1_n);
                scratch.fill(0.0);
                w.p.matvec_t_block_acc(d.d1, &dc, &mut scratch);
                linalg::axpy(1.0, &scratch, de1.row_mut(s));
            }
            grads.p.add_outer_block(0, &dc_total, e1_x);
            scratch.fill(0.0);
            w.p.matvec_t_block_acc(0, &dc_total, &mut scratch);
            linalg::axpy(1.0, &scratch, de1.row_mut(target.slot));
        }

        // Warm-up layer: e1 = LeakyReLU(W0 · agg), agg = e0_x + Σ π⁰ e0_n.
        let base = &self.params.embeddings.base;
        let mut dz = vec![0.0; d.d1];
        let mut da = vec![0.0; d.d0];
        for (slot, &node) in trace.warm_nodes.iter().enumerate() {
            let g = de1.row(slot);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let pre = trace.warm_pre.row(slot);
            for c in 0..d.d1 {
                dz[c] = g[c] * leaky_relu_grad(pre[c], slope);
            }
            grads.w0.add_outer(&dz, trace.warm_agg.row(slot));
            da.fill(0.0);
            w.w0.matvec_t_acc(&dz, &mut da);
            linalg::axpy(1.0, &da, grads.base.row_mut(node));
            let (side, idx, neighbors, scale) = warm_neighbors(graph, warmup_capped, node);
            let other = side.opposite();
            let deg = graph.degree(side, idx) as f64;
            for &n in neighbors {
                let pi = scale / (deg * graph.degree(other, n) as f64).sqrt();
                linalg::axpy(pi, &da, grads.base.row_mut(graph.node(other, n)));
            }
        }
        debug_assert_eq!(base.cols(), d.d0);
        Ok(())
    }
}
