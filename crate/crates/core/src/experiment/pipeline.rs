use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ObjectiveN};
use crate::certify::{
    compute_certificate, evaluate_posterior, test_set_bounds, CertificationSet, CertifyOptions,
    EvalReport, RiskCertificate, TestSetBounds,
};
use crate::data::{make_partitions, Dataset, Mode, Partition, Role, SplitSpec, Standardizer};
use crate::nn::{
    erm_train_traced, init_weights, FcnArchitecture, LossSpec, TrainConfigErm, TrainTrace,
    WeightSet,
};
use crate::pnn::{
    init_prior_traced, train_posterior, GaussianWeightDist, PnnTrace, PriorMode, PriorSpec,
    TrainConfigPnn,
};
use crate::rng::{derive_seed, stream};
use crate::Result;

/// A partition with its standardised data.
///
/// In PNN modes the standardiser is fitted on the prior roles only, so that
/// nothing the prior depends on is computed from certification data. In ERM
/// mode it is fitted on the training set.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub part: Partition,
    pub standardizer: Standardizer,
    /// Post-removal data after standardisation; rows match `part.data`.
    pub data: Dataset,
}

impl Prepared {
    pub fn role(&self, role: Role) -> Dataset {
        self.data.subset(self.part.indices(role))
    }
}

pub fn prepare(ds: &Dataset, spec: &SplitSpec) -> Result<Prepared> {
    let part = make_partitions(ds, spec)?;
    let fit_rows = if spec.mode.is_pnn() {
        part.prior_indices()
    } else {
        part.s_full.clone()
    };
    let standardizer = Standardizer::fit(&part.data.subset(&fit_rows))?;
    let data = standardizer.apply(&part.data)?;
    Ok(Prepared {
        part,
        standardizer,
        data,
    })
}

impl ExperimentConfig {
    pub fn split_spec(&self, mode: Mode, removal: f64, prior_fraction: f64, seed: u64) -> SplitSpec {
        SplitSpec {
            test_fraction: self.test_fraction,
            prior_fraction,
            prior_val_fraction: self.prior_val_fraction,
            removal_fraction: removal,
            stratified_removal: self.stratified_removal,
            mode,
            seed,
        }
    }

    pub fn erm_config(&self, epochs: usize, seed: u64) -> TrainConfigErm {
        TrainConfigErm {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            dropout_rate: self.dropout,
            loss: LossSpec {
                kind: self.erm_loss,
                p_min: self.p_min,
            },
            seed,
            max_grad_norm: self.max_grad_norm,
            ..Default::default()
        }
    }

    pub fn prior_spec(&self) -> PriorSpec {
        PriorSpec {
            mode: PriorMode::LearnedMean,
            sigma_0: self.sigma_0,
            training: self.erm_config(self.prior_epochs, 0),
        }
    }

    pub fn pnn_config(&self, n_cert: usize, seed: u64) -> TrainConfigPnn {
        TrainConfigPnn {
            epochs: self.posterior_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            n_for_objective: match self.objective_n {
                ObjectiveN::Train => None,
                ObjectiveN::Cert => Some(n_cert),
            },
            delta: self.confidence.delta,
            p_min: self.p_min,
            seed: derive_seed(seed, &[stream::POSTERIOR_TRAIN]),
            sampling: self.sampling,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn certify_options(&self, seed: u64) -> CertifyOptions {
        CertifyOptions {
            confidence: self.confidence,
            m: self.mc_samples,
            base_seed: derive_seed(seed, &[stream::CERTIFY]),
            workers: self.mc_workers,
            xent_p_min: self.xent_certificate.then_some(self.p_min),
        }
    }
}

fn architecture(data: &Dataset) -> Result<FcnArchitecture> {
    FcnArchitecture::standard(data.dim(), data.class_count.max(2))
}

#[derive(Debug, Clone)]
pub struct PnnRun {
    pub prior_fraction: f64,
    pub prior: GaussianWeightDist,
    pub posterior: GaussianWeightDist,
    pub prior_trace: Option<TrainTrace>,
    pub trace: PnnTrace,
    pub certificate: RiskCertificate,
}

/// Prior, posterior and certificate for one prepared partition.
pub fn run_pnn(prep: &Prepared, cfg: &ExperimentConfig, seed: u64) -> Result<PnnRun> {
    let arch = architecture(&prep.data)?;
    let (s_pri, s_prival) = (prep.role(Role::Prior), prep.role(Role::PriorValidation));
    let (prior, prior_trace) = init_prior_traced(&arch, &cfg.prior_spec(), &s_pri, &s_prival, seed)?;
    let train = prep.role(Role::Train);
    let cert = CertificationSet::from_partition(&prep.part, &prep.data);
    let (posterior, trace) = train_posterior(&train, &prior, &cfg.pnn_config(cert.data.len(), seed))?;
    let mut certificate = compute_certificate(&posterior, &prior, &cert, &cfg.certify_options(seed))?;
    certificate.config_hash = cfg.hash();
    Ok(PnnRun {
        prior_fraction: prep.part.spec.prior_fraction,
        prior,
        posterior,
        prior_trace,
        trace,
        certificate,
    })
}

/// Runs every prior fraction and keeps the smallest certificate (the first
/// one on ties). Returns the chosen run with its preparation.
pub fn run_pnn_grid(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    mode: Mode,
    removal: f64,
    seed: u64,
) -> Result<(PnnRun, Prepared)> {
    let mut best: Option<(PnnRun, Prepared)> = None;
    for &pf in &cfg.prior_fractions {
        let prep = prepare(ds, &cfg.split_spec(mode, removal, pf, seed))?;
        let run = run_pnn(&prep, cfg, seed)?;
        let better = best
            .as_ref()
            .map_or(true, |(b, _)| run.certificate.final_bound < b.certificate.final_bound);
        if better {
            best = Some((run, prep));
        }
    }
    Ok(best.expect("prior fraction grid is nonempty"))
}

#[derive(Debug, Clone)]
pub struct ErmRun {
    pub weights: WeightSet,
    pub trace: TrainTrace,
    pub bounds: TestSetBounds,
}

pub fn run_erm(prep: &Prepared, cfg: &ExperimentConfig, seed: u64) -> Result<ErmRun> {
    let arch = architecture(&prep.data)?;
    let train = prep.role(Role::Train);
    let erm = cfg.erm_config(cfg.erm_epochs, derive_seed(seed, &[stream::ERM_TRAIN]));
    let (weights, trace) = erm_train_traced(&train, None, &erm, init_weights(&arch, seed))?;
    let bounds = test_set_bounds(&weights, &prep.role(Role::Test), cfg.confidence.delta_test)?;
    Ok(ErmRun {
        weights,
        trace,
        bounds,
    })
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub dataset: String,
    pub removal_fraction: f64,
    pub mode: Mode,
    pub seed: u64,
    pub prior_fraction: Option<f64>,
    pub stochastic_test_err: Option<f64>,
    pub mean_test_err: Option<f64>,
    pub mc_avg: Option<f64>,
    pub kl_div: Option<f64>,
    pub certificate: Option<f64>,
    pub quad_bound: Option<f64>,
    pub chernoff: Option<f64>,
    pub binomial: Option<f64>,
    pub n_cert: Option<usize>,
    pub n_test: Option<usize>,
    pub m: Option<usize>,
    pub wall_time: f64,
}

impl ResultsRow {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time = other.wall_time;
        a == *other
    }
}

fn empty_row(ds: &Dataset, removal: f64, mode: Mode, seed: u64) -> ResultsRow {
    ResultsRow {
        dataset: ds.name.clone(),
        removal_fraction: removal,
        mode,
        seed,
        prior_fraction: None,
        stochastic_test_err: None,
        mean_test_err: None,
        mc_avg: None,
        kl_div: None,
        certificate: None,
        quad_bound: None,
        chernoff: None,
        binomial: None,
        n_cert: None,
        n_test: None,
        m: None,
        wall_time: 0.0,
    }
}

/// The whole pipeline for one (dataset, removal, mode, seed) cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    removal: f64,
    mode: Mode,
    seed: u64,
) -> Result<ResultsRow> {
    let start = Instant::now();
    let mut row = empty_row(ds, removal, mode, seed);
    if mode.is_pnn() {
        let (run, prep) = run_pnn_grid(ds, cfg, mode, removal, seed)?;
        let c = &run.certificate;
        row.prior_fraction = Some(run.prior_fraction);
        row.mc_avg = Some(c.mc_avg_01);
        row.kl_div = Some(c.kl_div);
        row.certificate = Some(c.final_bound);
        row.quad_bound = Some(c.quad_bound);
        row.n_cert = Some(c.n_cert);
        row.m = Some(c.m_samples);
        if mode.has_test_set() {
            let EvalReport {
                stochastic_test_err_01,
                posterior_mean_test_err_01,
                n_test,
                ..
            } = evaluate_posterior(
                &run.posterior,
                &prep.role(Role::Test),
                cfg.samples_per_example,
                derive_seed(seed, &[stream::EVALUATE]),
            )?;
            row.stochastic_test_err = Some(stochastic_test_err_01);
            row.mean_test_err = Some(posterior_mean_test_err_01);
            row.n_test = Some(n_test);
        }
    } else {
        let prep = prepare(ds, &cfg.split_spec(mode, removal, cfg.prior_fractions[0], seed))?;
        let run = run_erm(&prep, cfg, seed)?;
        row.mean_test_err = Some(run.bounds.test_err_01);
        row.chernoff = Some(run.bounds.chernoff.value);
        row.binomial = Some(run.bounds.binomial.value);
        row.n_test = Some(run.bounds.n_test);
    }
    row.wall_time = start.elapsed().as_secs_f64();
    Ok(row)
}
