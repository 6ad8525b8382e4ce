mod common;

use common::*;
use selfcert::nn::{LossKind, LossSpec};
use selfcert::pnn::kl_gaussian_diag_grad;

const TOL: f64 = 1e-4;

#[test]
fn backprop_bounded_xent() {
    for seed in 0..5 {
        let err = erm_grad_error(seed, LossSpec::default(), None);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn backprop_cross_entropy() {
    let loss = LossSpec { kind: LossKind::CrossEntropy, p_min: 1e-4 };
    for seed in 0..5 {
        let err = erm_grad_error(seed, loss, None);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn backprop_with_frozen_dropout() {
    for seed in 0..5 {
        let err = erm_grad_error(seed, LossSpec::default(), Some(0.3));
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn objective_pathwise_gradient() {
    for seed in 0..5 {
        let (mu, rho) = fquad_grad_error(seed);
        assert!(mu < TOL && rho < TOL, "seed {seed}: mu {mu:e}, rho {rho:e}");
    }
}

#[test]
fn kl_gradient() {
    let (prior, q) = tiny_pair(7);
    let (_, g_mu, g_rho) = kl_gaussian_diag_grad(&q, &prior).unwrap();
    let kl = |mu: &[f64], rho: &[f64]| {
        let q = selfcert::pnn::GaussianWeightDist::new(q.arch(), mu.to_vec(), rho.to_vec()).unwrap();
        selfcert::pnn::kl_gaussian_diag(&q, &prior).unwrap()
    };
    let num_mu = central_diff(|m| kl(m, q.rho()), q.mu(), FD_STEP);
    let num_rho = central_diff(|r| kl(q.mu(), r), q.rho(), FD_STEP);
    assert!(max_rel_err(&g_mu, &num_mu) < TOL);
    assert!(max_rel_err(&g_rho, &num_rho) < TOL);
}
