//! Probabilistic networks: diagonal Gaussians over every weight and bias.
//!
//! Scales are parameterised as `sigma = softplus(rho)`, so any real `rho`
//! gives a valid distribution and gradient steps never leave the domain.
//! Weights are sampled as `W = mu + sigma * V` with standard normal `V`; the
//! noise is kept so gradients flow through the sample to `mu` and `rho`.

use ndarray::{ArrayView2, Axis};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::quadratic_budget;
use crate::data::Dataset;
use crate::nn::{
    backprop, clip_grad_norm, erm_train_traced, init_weights, FcnArchitecture, LossKind, LossSpec,
    SgdMomentum, TrainConfigErm, TrainTrace, WeightSet,
};
use crate::rng::{derive_seed, keyed_rng, stream};
use crate::{Error, Result};

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `s > 0`.
pub fn inverse_softplus(s: f64) -> f64 {
    s + (-(-s).exp_m1()).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWeightDist {
    arch: FcnArchitecture,
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl GaussianWeightDist {
    pub fn new(arch: &FcnArchitecture, mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        for v in [&mu, &rho] {
            if v.len() != arch.num_params() {
                return Err(Error::DimensionMismatch {
                    expected: arch.num_params(),
                    actual: v.len(),
                });
            }
        }
        if mu.iter().chain(&rho).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite distribution parameter".into()));
        }
        Ok(Self {
            arch: arch.clone(),
            mu,
            rho,
        })
    }

    /// Centred on `mean` with the same scale `sigma` for every parameter.
    pub fn isotropic(mean: WeightSet, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        let arch = mean.arch().clone();
        let rho = vec![inverse_softplus(sigma); arch.num_params()];
        Self::new(&arch, mean.into_params(), rho)
    }

    pub fn arch(&self) -> &FcnArchitecture {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn mu_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    pub fn rho_mut(&mut self) -> &mut [f64] {
        &mut self.rho
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn mean_weights(&self) -> WeightSet {
        WeightSet::from_params(&self.arch, self.mu.clone()).expect("shape checked on construction")
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.arch.layer_sizes(),
                other.arch.layer_sizes()
            )));
        }
        Ok(())
    }
}

/// Standard normal draws behind one weight sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise(pub Vec<f64>);

impl Noise {
    pub fn draw<R: rand::Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Noise((0..len).map(|_| rng.sample(StandardNormal)).collect())
    }
}

/// `mu + sigma * v` for the given noise.
pub fn weights_from_noise(q: &GaussianWeightDist, noise: &Noise) -> Result<WeightSet> {
    if noise.0.len() != q.num_params() {
        return Err(Error::DimensionMismatch {
            expected: q.num_params(),
            actual: noise.0.len(),
        });
    }
    let params = q
        .mu
        .iter()
        .zip(&q.rho)
        .zip(&noise.0)
        .map(|((&m, &r), &v)| m + softplus(r) * v)
        .collect();
    WeightSet::from_params(&q.arch, params)
}

pub fn sample_weights<R: rand::Rng + ?Sized>(
    q: &GaussianWeightDist,
    rng: &mut R,
) -> (WeightSet, Noise) {
    let noise = Noise::draw(q.num_params(), rng);
    let w = weights_from_noise(q, &noise).expect("noise sized to distribution");
    (w, noise)
}

/// `KL(q || p)` between diagonal Gaussians.
pub fn kl_gaussian_diag(q: &GaussianWeightDist, p: &GaussianWeightDist) -> Result<f64> {
    q.check_same_shape(p)?;
    let mut total = 0.0;
    for i in 0..q.num_params() {
        let (sq, sp) = (softplus(q.rho[i]), softplus(p.rho[i]));
        let d = q.mu[i] - p.mu[i];
        total += (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
    }
    Ok(total.max(0.0))
}

/// KL value with its gradient with respect to `q`'s `mu` and `rho`.
pub fn kl_gaussian_diag_grad(
    q: &GaussianWeightDist,
    p: &GaussianWeightDist,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    q.check_same_shape(p)?;
    let n = q.num_params();
    let (mut g_mu, mut g_rho) = (vec![0.0; n], vec![0.0; n]);
    let mut total = 0.0;
    for i in 0..n {
        let (sq, sp) = (softplus(q.rho[i]), softplus(p.rho[i]));
        let d = q.mu[i] - p.mu[i];
        let vp = sp * sp;
        total += (sp / sq).ln() + (sq * sq + d * d) / (2.0 * vp) - 0.5;
        g_mu[i] = d / vp;
        g_rho[i] = (-1.0 / sq + sq / vp) * sigmoid(q.rho[i]);
    }
    Ok((total.max(0.0), g_mu, g_rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    RandomMean,
    LearnedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mode: PriorMode,
    pub sigma_0: f64,
    /// ERM settings for the learned mean. Its `seed` is replaced by one
    /// derived from the seed passed to [`init_prior`].
    pub training: TrainConfigErm,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mode: PriorMode::LearnedMean,
            sigma_0: 0.005,
            training: TrainConfigErm {
                epochs: 500,
                ..Default::default()
            },
        }
    }
}

/// Prior distribution plus the ERM trace when its mean was learned.
pub fn init_prior_traced(
    arch: &FcnArchitecture,
    spec: &PriorSpec,
    s_pri: &Dataset,
    s_prival: &Dataset,
    seed: u64,
) -> Result<(GaussianWeightDist, Option<TrainTrace>)> {
    let init = init_weights(arch, seed);
    let (mean, trace) = match spec.mode {
        PriorMode::RandomMean => (init, None),
        PriorMode::LearnedMean => {
            if s_pri.is_empty() {
                return Err(Error::EmptySplit("prior training set".into()));
            }
            let cfg = TrainConfigErm {
                seed: derive_seed(seed, &[stream::PRIOR_TRAIN]),
                ..spec.training.clone()
            };
            let (w, trace) = erm_train_traced(s_pri, Some(s_prival), &cfg, init)?;
            (w, Some(trace))
        }
    };
    Ok((GaussianWeightDist::isotropic(mean, spec.sigma_0)?, trace))
}

pub fn init_prior(
    arch: &FcnArchitecture,
    spec: &PriorSpec,
    s_pri: &Dataset,
    s_prival: &Dataset,
    seed: u64,
) -> Result<GaussianWeightDist> {
    Ok(init_prior_traced(arch, spec, s_pri, s_prival, seed)?.0)
}

pub fn init_posterior_from_prior(prior: &GaussianWeightDist) -> GaussianWeightDist {
    prior.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSampling {
    /// One weight sample shared by the whole mini-batch.
    PerBatch,
    /// A fresh weight sample for every example.
    PerExample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfigPnn {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Sample size in the objective; `None` means the training set size.
    pub n_for_objective: Option<usize>,
    pub delta: f64,
    pub p_min: f64,
    pub seed: u64,
    pub sampling: NoiseSampling,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfigPnn {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 250,
            learning_rate: 1e-3,
            momentum: 0.95,
            n_for_objective: None,
            delta: 0.025,
            p_min: 1e-4,
            seed: 0,
            sampling: NoiseSampling::PerBatch,
            max_grad_norm: None,
        }
    }
}

impl TrainConfigPnn {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.n_for_objective == Some(0) {
            return Err(Error::InvalidConfig("n_for_objective must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig("delta must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn loss(&self) -> LossSpec {
        LossSpec {
            kind: LossKind::BoundedCrossEntropy,
            p_min: self.p_min,
        }
    }
}

/// Objective value, its parts, and gradients with respect to `mu` and `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct FquadEval {
    pub objective: f64,
    /// Mean bounded cross-entropy on the batch.
    pub empirical: f64,
    pub kl: f64,
    /// `(KL + ln(2 sqrt(n) / delta)) / (2n)`.
    pub budget: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

/// Combines an empirical term with the KL term. `emp_mu` and `emp_rho` hold
/// the gradients of the empirical term.
fn assemble(
    q: &GaussianWeightDist,
    prior: &GaussianWeightDist,
    empirical: f64,
    emp_mu: Vec<f64>,
    emp_rho: Vec<f64>,
    n: usize,
    delta: f64,
) -> Result<FquadEval> {
    let (kl, kl_mu, kl_rho) = kl_gaussian_diag_grad(q, prior)?;
    let b = quadratic_budget(kl, n, delta);
    let (se, sb) = ((empirical + b).sqrt(), b.sqrt());
    let objective = (se + sb).powi(2);
    let d_emp = (se + sb) / se;
    let d_kl = (se + sb) * (1.0 / se + 1.0 / sb) / (2.0 * n as f64);
    let combine = |e: Vec<f64>, k: Vec<f64>| -> Vec<f64> {
        e.into_iter().zip(k).map(|(e, k)| d_emp * e + d_kl * k).collect()
    };
    Ok(FquadEval {
        objective,
        empirical,
        kl,
        budget: b,
        grad_mu: combine(emp_mu, kl_mu),
        grad_rho: combine(emp_rho, kl_rho),
    })
}

/// Accumulates the pathwise gradient of one sample into `mu`/`rho` buffers.
fn add_pathwise(
    q: &GaussianWeightDist,
    noise: &Noise,
    grad_w: &[f64],
    scale: f64,
    g_mu: &mut [f64],
    g_rho: &mut [f64],
) {
    for i in 0..grad_w.len() {
        let g = scale * grad_w[i];
        g_mu[i] += g;
        g_rho[i] += g * noise.0[i] * sigmoid(q.rho[i]);
    }
}

/// Objective on a batch with the given weight noise (frozen `V`).
pub fn fquad_objective_with_noise(
    q: &GaussianWeightDist,
    prior: &GaussianWeightDist,
    x: ArrayView2<f64>,
    y: &[usize],
    cfg: &TrainConfigPnn,
    n: usize,
    noise: &Noise,
) -> Result<FquadEval> {
    let w = weights_from_noise(q, noise)?;
    let (empirical, grads) = backprop(&w, x, y, &cfg.loss(), None)?;
    let p = q.num_params();
    let (mut g_mu, mut g_rho) = (vec![0.0; p], vec![0.0; p]);
    add_pathwise(q, noise, grads.params(), 1.0, &mut g_mu, &mut g_rho);
    assemble(q, prior, empirical, g_mu, g_rho, n, cfg.delta)
}

/// Objective on a batch, drawing weight noise from `rng` according to
/// `cfg.sampling`. `n` is the sample size plugged into the bound.
pub fn fquad_objective<R: rand::Rng + ?Sized>(
    q: &GaussianWeightDist,
    prior: &GaussianWeightDist,
    x: ArrayView2<f64>,
    y: &[usize],
    cfg: &TrainConfigPnn,
    n: usize,
    rng: &mut R,
) -> Result<FquadEval> {
    if x.nrows() == 0 {
        return Err(Error::EmptySplit("objective batch".into()));
    }
    match cfg.sampling {
        NoiseSampling::PerBatch => {
            let noise = Noise::draw(q.num_params(), rng);
            fquad_objective_with_noise(q, prior, x, y, cfg, n, &noise)
        }
        NoiseSampling::PerExample => {
            let p = q.num_params();
            let (mut g_mu, mut g_rho) = (vec![0.0; p], vec![0.0; p]);
            let scale = 1.0 / x.nrows() as f64;
            let mut empirical = 0.0;
            for (i, row) in x.axis_iter(Axis(0)).enumerate() {
                let (w, noise) = sample_weights(q, rng);
                let row = row.insert_axis(Axis(0));
                let (l, grads) = backprop(&w, row, &y[i..=i], &cfg.loss(), None)?;
                empirical += scale * l;
                add_pathwise(q, &noise, grads.params(), scale, &mut g_mu, &mut g_rho);
            }
            assemble(q, prior, empirical, g_mu, g_rho, n, cfg.delta)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PnnTrace {
    /// Mean objective over the batches of each epoch.
    pub epoch_objectives: Vec<f64>,
    /// Mean bounded cross-entropy of each epoch.
    pub epoch_empirical: Vec<f64>,
    /// KL to the prior at the end of each epoch.
    pub epoch_kl: Vec<f64>,
}

/// Trains the posterior on `train_set`, starting from the prior.
pub fn train_posterior(
    train_set: &Dataset,
    prior: &GaussianWeightDist,
    cfg: &TrainConfigPnn,
) -> Result<(GaussianWeightDist, PnnTrace)> {
    cfg.validate()?;
    crate::nn::check_data_dims(prior.arch(), train_set)?;
    cfg.loss().validate(prior.arch().num_classes())?;
    let n = cfg.n_for_objective.unwrap_or(train_set.len());
    let p = prior.num_params();
    let mut q = init_posterior_from_prior(prior);
    let mut opt_mu = SgdMomentum::new(p, cfg.learning_rate, cfg.momentum);
    let mut opt_rho = SgdMomentum::new(p, cfg.learning_rate, cfg.momentum);
    let mut trace = PnnTrace::default();

    for epoch in 0..cfg.epochs {
        let (mut obj_sum, mut emp_sum) = (0.0, 0.0);
        let batches = crate::nn::epoch_batches(train_set.len(), cfg.batch_size, cfg.seed, epoch);
        for (b, idx) in batches.iter().enumerate() {
            let x = train_set.features.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let mut rng = keyed_rng(cfg.seed, &[epoch as u64, b as u64, 2]);
            let mut eval = fquad_objective(&q, prior, x.view(), &y, cfg, n, &mut rng)?;
            if let Some(max_norm) = cfg.max_grad_norm {
                let mut all: Vec<f64> = eval.grad_mu.iter().chain(&eval.grad_rho).copied().collect();
                clip_grad_norm(&mut all, max_norm);
                eval.grad_rho = all.split_off(p);
                eval.grad_mu = all;
            }
            opt_mu.step(q.mu_mut(), &eval.grad_mu);
            opt_rho.step(q.rho_mut(), &eval.grad_rho);
            obj_sum += eval.objective * idx.len() as f64;
            emp_sum += eval.empirical * idx.len() as f64;
        }
        let sigma_ok = q.rho.iter().all(|&r| softplus(r) > 0.0);
        if !sigma_ok || q.mu.iter().chain(&q.rho).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "posterior degenerate after epoch {epoch}"
            )));
        }
        trace.epoch_objectives.push(obj_sum / train_set.len() as f64);
        trace.epoch_empirical.push(emp_sum / train_set.len() as f64);
        trace.epoch_kl.push(kl_gaussian_diag(&q, prior)?);
    }
    Ok((q, trace))
}
