mod common;

use common::{finite_difference_check, tiny_instance};
use gacse::model::GradientSet;
use gacse::linalg::Matrix;
use gacse::objective::{batch_loss_and_grad, L2Scope, LossConfig};

fn exact(lambda1: f64, lambda2: f64) -> LossConfig {
    LossConfig {
        lambda1,
        lambda2,
        l2_scope: L2Scope::Full,
        // The exact gradient of the total loss includes the margin path.
        detach_margin: false,
        ..LossConfig::default()
    }
}

#[test]
fn total_loss_gradient_matches_central_differences() {
    for seed in 0..5 {
        let (g, m, b) = tiny_instance(seed);
        for cfg in [exact(1e-4, 1e-5), exact(0.7, 0.05)] {
            let r = finite_difference_check(&g, &m, &b, &cfg, 1e-5, 1e-4, 1e-7);
            assert_eq!(r.failures, 0, "seed {seed}: {r:?}");
            assert_eq!(r.entries, m.params.num_parameters());
        }
    }
}

#[test]
fn gradient_through_live_margin_and_ablations() {
    for seed in 10..13 {
        let (g, m, b) = tiny_instance(seed);
        for cfg in [
            LossConfig { bpr_form: gacse::objective::BprForm::Literal, ..exact(0.3, 0.01) },
            LossConfig { no_adaptive_margin: true, ..exact(0.3, 0.01) },
            LossConfig { no_similarity: true, ..exact(0.3, 0.01) },
        ] {
            let r = finite_difference_check(&g, &m, &b, &cfg, 1e-5, 1e-4, 1e-7);
            assert_eq!(r.failures, 0, "seed {seed} {cfg:?}: {r:?}");
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let (g, m, b) = tiny_instance(3);
    let trace = m.forward(&g, &b).unwrap();
    let k = trace.targets().len();
    let mut grads = GradientSet::zeros_like(&m.params);
    m.backward(&g, &b.warmup_neighbors, &trace, &Matrix::zeros(k, 4), &Matrix::zeros(k, 4), &mut grads)
        .unwrap();
    assert!(grads.is_zero());
    let err = m
        .backward(&g, &b.warmup_neighbors, &trace, &Matrix::zeros(k + 1, 4), &Matrix::zeros(k, 4), &mut grads)
        .unwrap_err();
    assert_eq!(err.category(), "shape");
}

#[test]
fn context_tables_only_move_with_similarity_pairs() {
    let (g, m, mut b) = tiny_instance(4);
    b.user_sim.clear();
    b.item_sim.clear();
    let cfg = LossConfig { lambda2: 0.0, ..LossConfig::default() };
    let mut grads = GradientSet::zeros_like(&m.params);
    batch_loss_and_grad(&m, &g, &b, &cfg, &mut grads).unwrap();
    assert!(grads.user_context.matrix().as_slice().iter().all(|&x| x == 0.0));
    assert!(grads.item_context.matrix().as_slice().iter().all(|&x| x == 0.0));
}

#[test]
fn similarity_gradient_skips_propagation_weights() {
    let (g, m, b) = tiny_instance(5);
    let base = LossConfig { lambda1: 0.0, lambda2: 0.0, ..LossConfig::default() };
    let with = LossConfig { lambda1: 2.0, ..base };
    let mut g0 = GradientSet::zeros_like(&m.params);
    let mut g1 = GradientSet::zeros_like(&m.params);
    batch_loss_and_grad(&m, &g, &b, &base, &mut g0).unwrap();
    batch_loss_and_grad(&m, &g, &b, &with, &mut g1).unwrap();
    for (a, c) in [(&g0.w0, &g1.w0), (&g0.w1, &g1.w1), (&g0.w2, &g1.w2), (&g0.p, &g1.p), (&g0.v, &g1.v)] {
        assert_eq!(a, c);
    }
}
