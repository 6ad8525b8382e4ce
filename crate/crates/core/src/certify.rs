//! Risk certificates for posteriors and test-set bounds for fixed networks.
//!
//! The certificate chain is
//!
//! ```text
//! mc_avg   = Monte Carlo 0-1 risk of m weight draws on S_cert
//! emp      = kl_inverse(mc_avg, ln(2/delta') / m)
//! final    = kl_inverse(emp, (KL(Q||P) + ln(2 sqrt(n)/delta)) / n)
//! ```
//!
//! Draw `j` uses noise keyed by `(base_seed, j)`, and each draw contributes an
//! integer error count, so the result does not depend on how the draws are
//! spread over threads.

use std::collections::BTreeSet;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    binomial_test_bound, chernoff_test_bound, mc_sample_bound, pac_bayes_kl_bound,
    pac_bayes_quadratic_bound, BoundValue, ConfidenceParams,
};
use crate::data::{Dataset, Partition, Role};
use crate::eval::{error_count, features_f32, EvalNet};
use crate::nn::WeightSet;
use crate::pnn::{kl_gaussian_diag, GaussianWeightDist};
use crate::rng::keyed_rng;
use crate::{Error, Result};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Stochastic test evaluation draws this many weight sets per example.
pub const DEFAULT_SAMPLES_PER_EXAMPLE: usize = 100;

/// Certification data together with the provenance needed to trust it.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationSet {
    pub data: Dataset,
    /// Row ids of `data` in the run's index space.
    pub indices: Vec<usize>,
    /// Row ids the prior was trained or selected on. `None` means unknown,
    /// which is refused.
    pub prior_indices: Option<Vec<usize>>,
}

impl CertificationSet {
    /// `data` must be the (possibly transformed) post-removal data of `part`.
    pub fn from_partition(part: &Partition, data: &Dataset) -> Self {
        Self {
            data: data.subset(part.indices(Role::Certification)),
            indices: part.s_cert.clone(),
            prior_indices: Some(part.prior_indices()),
        }
    }

    /// A set whose prior is known not to depend on any data (random prior).
    pub fn data_independent_prior(data: Dataset) -> Self {
        let indices = (0..data.len()).collect();
        Self {
            data,
            indices,
            prior_indices: Some(Vec::new()),
        }
    }

    pub fn verify(&self) -> Result<()> {
        let prior = self.prior_indices.as_ref().ok_or(Error::MissingProvenance)?;
        if self.indices.len() != self.data.len() {
            return Err(Error::InvalidConfig(
                "certification indices do not match its data".into(),
            ));
        }
        let cert: BTreeSet<usize> = self.indices.iter().copied().collect();
        let overlap = prior.iter().filter(|i| cert.contains(i)).count();
        if overlap > 0 {
            return Err(Error::CertificationOverlap { overlap });
        }
        if self.data.is_empty() {
            return Err(Error::EmptySplit("certification set".into()));
        }
        Ok(())
    }
}

fn run_with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Per-thread buffers for sampling networks.
struct Sampler<'a> {
    q: &'a GaussianWeightDist,
    sigma: &'a [f64],
    net: EvalNet,
}

impl<'a> Sampler<'a> {
    fn new(q: &'a GaussianWeightDist, sigma: &'a [f64]) -> Self {
        Self {
            q,
            sigma,
            net: EvalNet::zeros(q.arch()),
        }
    }

    fn draw(&mut self, base_seed: u64, keys: &[u64]) -> &EvalNet {
        let mut rng = keyed_rng(base_seed, keys);
        let (mu, sigma) = (self.q.mu(), self.sigma);
        self.net.fill_from((0..mu.len()).map(|i| {
            let v: f64 = rng.sample(StandardNormal);
            mu[i] + sigma[i] * v
        }));
        &self.net
    }
}

/// Total 0-1 errors over `m` weight draws on `data`, using the global pool
/// or a dedicated pool of `workers` threads.
pub fn mc_error_total(
    posterior: &GaussianWeightDist,
    data: &Dataset,
    m: usize,
    base_seed: u64,
    workers: Option<usize>,
) -> Result<u64> {
    if data.is_empty() {
        return Err(Error::EmptySplit("Monte Carlo evaluation set".into()));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("at least one Monte Carlo sample is required".into()));
    }
    let x = features_f32(data);
    let sigma = posterior.sigma();
    run_with_workers(workers, || {
        (0..m as u64)
            .into_par_iter()
            .map_init(
                || Sampler::new(posterior, &sigma),
                |s, j| s.draw(base_seed, &[j]).count_errors(x.view(), &data.labels),
            )
            .sum()
    })
}

/// Mean 0-1 risk over `m` weight draws, each evaluated on all of `data`.
pub fn mc_empirical_risk(
    posterior: &GaussianWeightDist,
    data: &Dataset,
    m: usize,
    base_seed: u64,
) -> Result<f64> {
    mc_empirical_risk_with_workers(posterior, data, m, base_seed, None)
}

pub fn mc_empirical_risk_with_workers(
    posterior: &GaussianWeightDist,
    data: &Dataset,
    m: usize,
    base_seed: u64,
    workers: Option<usize>,
) -> Result<f64> {
    let total = mc_error_total(posterior, data, m, base_seed, workers)?;
    Ok(total as f64 / (m as f64 * data.len() as f64))
}

/// Mean bounded cross-entropy over `m` weight draws. Per-draw sums are
/// reduced in draw order.
pub fn mc_bounded_xent(
    posterior: &GaussianWeightDist,
    data: &Dataset,
    m: usize,
    base_seed: u64,
    p_min: f64,
    workers: Option<usize>,
) -> Result<f64> {
    if data.is_empty() || m == 0 {
        return Err(Error::InvalidConfig("empty Monte Carlo evaluation".into()));
    }
    let x = features_f32(data);
    let sigma = posterior.sigma();
    let per_draw: Vec<f64> = run_with_workers(workers, || {
        (0..m as u64)
            .into_par_iter()
            .map_init(
                || Sampler::new(posterior, &sigma),
                |s, j| s.draw(base_seed, &[j]).bounded_xent_sum(x.view(), &data.labels, p_min),
            )
            .collect()
    })?;
    Ok(per_draw.iter().sum::<f64>() / (m as f64 * data.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCertificate {
    pub mc_avg_01: f64,
    pub mc_errors: u64,
    pub emp_bound: f64,
    pub kl_div: f64,
    pub n_cert: usize,
    pub m_samples: usize,
    pub final_bound: f64,
    pub quad_bound: f64,
    pub vacuous: bool,
    pub delta: f64,
    pub delta_prime: f64,
    pub base_seed: u64,
    pub created_unix: u64,
    pub config_hash: String,
    /// Same chain for the bounded cross-entropy, when requested.
    pub xent_mc_avg: Option<f64>,
    pub xent_emp_bound: Option<f64>,
    pub xent_final_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub confidence: ConfidenceParams,
    pub m: usize,
    pub base_seed: u64,
    pub workers: Option<usize>,
    /// Also certify the bounded cross-entropy with this `p_min`.
    pub xent_p_min: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            confidence: ConfidenceParams::default(),
            m: 150_000,
            base_seed: 0,
            workers: None,
            xent_p_min: None,
        }
    }
}

/// The certificate chain from a known Monte Carlo average.
pub fn certificate_from_parts(
    mc_avg: f64,
    kl_div: f64,
    n_cert: usize,
    m: usize,
    cp: &ConfidenceParams,
) -> (f64, BoundValue, BoundValue) {
    let emp = mc_sample_bound(mc_avg, m, cp.delta_prime);
    let kl = pac_bayes_kl_bound(emp, kl_div, n_cert, cp.delta);
    let quad = pac_bayes_quadratic_bound(emp, kl_div, n_cert, cp.delta);
    (emp, kl, quad)
}

pub fn compute_certificate(
    posterior: &GaussianWeightDist,
    prior: &GaussianWeightDist,
    cert: &CertificationSet,
    opts: &CertifyOptions,
) -> Result<RiskCertificate> {
    cert.verify()?;
    opts.confidence.validate()?;
    let n = cert.data.len();
    let kl_div = kl_gaussian_diag(posterior, prior)?;
    let errors = mc_error_total(posterior, &cert.data, opts.m, opts.base_seed, opts.workers)?;
    let mc_avg = errors as f64 / (opts.m as f64 * n as f64);
    let (emp, kl, quad) = certificate_from_parts(mc_avg, kl_div, n, opts.m, &opts.confidence);
    let xent = match opts.xent_p_min {
        Some(p_min) => {
            let avg = mc_bounded_xent(posterior, &cert.data, opts.m, opts.base_seed, p_min, opts.workers)?;
            let (e, b, _) = certificate_from_parts(avg, kl_div, n, opts.m, &opts.confidence);
            Some((avg, e, b.value))
        }
        None => None,
    };
    Ok(RiskCertificate {
        mc_avg_01: mc_avg,
        mc_errors: errors,
        emp_bound: emp,
        kl_div,
        n_cert: n,
        m_samples: opts.m,
        final_bound: kl.value,
        quad_bound: quad.value,
        vacuous: kl.vacuous,
        delta: opts.confidence.delta,
        delta_prime: opts.confidence.delta_prime,
        base_seed: opts.base_seed,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        config_hash: String::new(),
        xent_mc_avg: xent.map(|x| x.0),
        xent_emp_bound: xent.map(|x| x.1),
        xent_final_bound: xent.map(|x| x.2),
    })
}

impl RiskCertificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header line and one data line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub stochastic_test_err_01: f64,
    pub posterior_mean_test_err_01: f64,
    pub samples_per_example: usize,
    pub n_test: usize,
}

/// Average 0-1 error when every prediction uses freshly drawn weights.
/// Draw `d` for example `i` uses noise keyed by `(base_seed, i, d)`.
pub fn stochastic_test_error(
    posterior: &GaussianWeightDist,
    test: &Dataset,
    samples_per_example: usize,
    base_seed: u64,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptySplit("test set".into()));
    }
    if samples_per_example == 0 {
        return Err(Error::InvalidConfig("samples_per_example must be positive".into()));
    }
    let x = features_f32(test);
    let sigma = posterior.sigma();
    let errors: u64 = (0..test.len())
        .into_par_iter()
        .map_init(
            || Sampler::new(posterior, &sigma),
            |s, i| {
                let row = x.slice(ndarray::s![i..=i, ..]);
                let label = &test.labels[i..=i];
                (0..samples_per_example as u64)
                    .map(|d| s.draw(base_seed, &[i as u64, d]).count_errors(row, label))
                    .sum::<u64>()
            },
        )
        .sum();
    Ok(errors as f64 / (test.len() * samples_per_example) as f64)
}

/// 0-1 error of the network whose weights are the posterior means.
pub fn posterior_mean_test_error(posterior: &GaussianWeightDist, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptySplit("test set".into()));
    }
    Ok(error_count(&posterior.mean_weights(), test) as f64 / test.len() as f64)
}

pub fn evaluate_posterior(
    posterior: &GaussianWeightDist,
    test: &Dataset,
    samples_per_example: usize,
    base_seed: u64,
) -> Result<EvalReport> {
    Ok(EvalReport {
        stochastic_test_err_01: stochastic_test_error(posterior, test, samples_per_example, base_seed)?,
        posterior_mean_test_err_01: posterior_mean_test_error(posterior, test)?,
        samples_per_example,
        n_test: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetBounds {
    pub test_err_01: f64,
    pub error_count: usize,
    pub n_test: usize,
    pub chernoff: BoundValue,
    pub binomial: BoundValue,
}

pub fn bounds_from_count(k: usize, n: usize, delta_test: f64) -> TestSetBounds {
    let err = k as f64 / n as f64;
    TestSetBounds {
        test_err_01: err,
        error_count: k,
        n_test: n,
        chernoff: chernoff_test_bound(err, n, delta_test),
        binomial: binomial_test_bound(k, n, delta_test),
    }
}

pub fn test_set_bounds(w: &WeightSet, test: &Dataset, delta_test: f64) -> Result<TestSetBounds> {
    if test.is_empty() {
        return Err(Error::EmptySplit("test set".into()));
    }
    Ok(bounds_from_count(error_count(w, test) as usize, test.len(), delta_test))
}
