#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use selfcert::nn::{backprop, init_weights, DropoutMasks, FcnArchitecture, LossSpec, WeightSet};
use selfcert::pnn::{
    fquad_objective_with_noise, inverse_softplus, GaussianWeightDist, Noise, TrainConfigPnn,
};
use selfcert::rng::keyed_rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-5;

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR))
        .fold(0.0, f64::max)
}

pub fn tiny_arch() -> FcnArchitecture {
    FcnArchitecture::new(vec![2, 4, 4, 2]).unwrap()
}

pub fn tiny_batch(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = keyed_rng(seed, &[0]);
    let x = Array2::from_shape_simple_fn((n, 2), || rng.sample::<f64, _>(StandardNormal));
    let y = (0..n).map(|i| i % 2).collect();
    (x, y)
}

/// Initial weights with every parameter, biases included, moved off zero so
/// no pre-activation sits exactly on a ReLU kink.
pub fn random_weights(arch: &FcnArchitecture, seed: u64) -> WeightSet {
    let mut w = init_weights(arch, seed);
    let mut rng = keyed_rng(seed, &[4]);
    for p in w.params_mut() {
        *p += 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    w
}

/// Max relative error between backprop and central differences on a
/// 2-4-4-2 network, optionally with frozen dropout masks.
pub fn erm_grad_error(seed: u64, loss: LossSpec, dropout: Option<f64>) -> f64 {
    let arch = tiny_arch();
    let w = random_weights(&arch, seed);
    let (x, y) = tiny_batch(16, seed);
    let masks = dropout.map(|rate| DropoutMasks::sample(&arch, x.nrows(), rate, true, &mut keyed_rng(seed, &[1])));
    let (_, grad) = backprop(&w, x.view(), &y, &loss, masks.as_ref()).unwrap();
    let f = |p: &[f64]| {
        let w = WeightSet::from_params(&arch, p.to_vec()).unwrap();
        backprop(&w, x.view(), &y, &loss, masks.as_ref()).unwrap().0
    };
    let numeric = central_diff(f, w.params(), FD_STEP);
    max_rel_err(grad.params(), &numeric)
}

/// A prior and a posterior that differs from it in both mean and scale.
pub fn tiny_pair(seed: u64) -> (GaussianWeightDist, GaussianWeightDist) {
    let arch = tiny_arch();
    let prior = GaussianWeightDist::isotropic(init_weights(&arch, seed), 0.05).unwrap();
    let mut rng = keyed_rng(seed, &[2]);
    let mu: Vec<f64> = prior.mu().iter().map(|m| m + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let rho: Vec<f64> = (0..mu.len())
        .map(|_| inverse_softplus(0.05) + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let post = GaussianWeightDist::new(&arch, mu, rho).unwrap();
    (prior, post)
}

/// Max relative errors of the objective gradient in `mu` and in `rho`,
/// with the weight noise held fixed.
pub fn fquad_grad_error(seed: u64) -> (f64, f64) {
    let (prior, q) = tiny_pair(seed);
    let (x, y) = tiny_batch(8, seed);
    let cfg = TrainConfigPnn::default();
    let n = 100;
    let noise = Noise::draw(q.num_params(), &mut keyed_rng(seed, &[3]));
    let eval = fquad_objective_with_noise(&q, &prior, x.view(), &y, &cfg, n, &noise).unwrap();
    let objective = |mu: &[f64], rho: &[f64]| {
        let q = GaussianWeightDist::new(q.arch(), mu.to_vec(), rho.to_vec()).unwrap();
        fquad_objective_with_noise(&q, &prior, x.view(), &y, &cfg, n, &noise).unwrap().objective
    };
    let num_mu = central_diff(|mu| objective(mu, q.rho()), q.mu(), FD_STEP);
    let num_rho = central_diff(|rho| objective(q.mu(), rho), q.rho(), FD_STEP);
    (max_rel_err(&eval.grad_mu, &num_mu), max_rel_err(&eval.grad_rho, &num_rho))
}
