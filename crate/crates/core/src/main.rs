use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use selfcert::certify::{compute_certificate, evaluate_posterior, test_set_bounds, CertificationSet};
use selfcert::data::openml::{fetch_openml, url_template};
use selfcert::data::{Dataset, Mode, Role, SplitSpec};
use selfcert::experiment::{
    ablate, load_dataset, prepare, report, run_erm, run_pnn, DatasetSource, ExperimentConfig,
    Profile,
};
use selfcert::model_io::{load_model, save_model, Model, ModelFile, ModelMeta};

#[derive(Parser)]
#[command(name = "selfcert", version, about = "Self-certified PAC-Bayes learning of probabilistic networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download (or read from cache) a dataset and describe it.
    Fetch(Common),
    /// Train a deterministic network and report test-set bounds.
    TrainErm(Common),
    /// Train a prior and posterior and save both.
    TrainPnn(Common),
    /// Certify a saved posterior on its certification set.
    Certify(Common),
    /// Evaluate saved models on their test set.
    Evaluate(Common),
    /// Run the full removal ablation.
    Ablate(Common),
    /// Turn a results file into plot data.
    Report {
        /// results.csv produced by `ablate`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "report")]
        out_dir: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    /// Dataset source (openml:<id>, alias, blobs[:opts], or CSV path). Repeatable.
    #[arg(long)]
    dataset: Vec<String>,
    #[arg(long)]
    label_col: Option<String>,
    /// Repeatable.
    #[arg(long)]
    mode: Vec<Mode>,
    /// Removal fraction. Repeatable.
    #[arg(long)]
    removal: Vec<f64>,
    /// Prior fraction. Repeatable.
    #[arg(long)]
    prior_frac: Vec<f64>,
    /// Seed (first seed of the sweep).
    #[arg(long)]
    seed: Option<u64>,
    /// Seeds per cell.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Threads for Monte Carlo evaluation.
    #[arg(long)]
    workers: Option<usize>,
    /// Cells run concurrently by `ablate`.
    #[arg(long)]
    cell_workers: Option<usize>,
    #[arg(long, env = "SELFCERT_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, self.profile)
                .with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::preset(self.profile.unwrap_or(Profile::Paper)),
        };
        if !self.dataset.is_empty() {
            cfg.datasets = self.dataset.clone();
        }
        if self.label_col.is_some() {
            cfg.label_col = self.label_col.clone();
        }
        if !self.mode.is_empty() {
            cfg.modes = self.mode.clone();
        }
        if !self.removal.is_empty() {
            cfg.removals = self.removal.clone();
        }
        if !self.prior_frac.is_empty() {
            cfg.prior_fractions = self.prior_frac.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed_offset = s;
        }
        if let Some(s) = self.seeds {
            cfg.seeds = s;
        }
        if let Some(m) = self.mc_samples {
            cfg.mc_samples = m;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if self.workers.is_some() {
            cfg.mc_workers = self.workers;
        }
        if let Some(w) = self.cell_workers {
            cfg.cell_workers = w;
        }
        if self.cache_dir.is_some() {
            cfg.cache_dir = self.cache_dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The single cell addressed by the first entry of every grid.
struct Cell {
    cfg: ExperimentConfig,
    data: Dataset,
    spec: SplitSpec,
}

fn single_cell(common: &Common, default_mode: Mode) -> Result<Cell> {
    let cfg = common.resolve()?;
    let data = load_dataset(&cfg, &cfg.datasets[0])?;
    let mode = if common.mode.is_empty() { default_mode } else { cfg.modes[0] };
    let spec = cfg.split_spec(mode, cfg.removals[0], cfg.prior_fractions[0], cfg.seed_offset);
    Ok(Cell { cfg, data, spec })
}

fn meta_for(cell: &Cell, role: &str) -> Result<ModelMeta> {
    let mut meta = ModelMeta {
        sigma_0: cell.spec.mode.is_pnn().then_some(cell.cfg.sigma_0),
        p_min: cell.cfg.p_min,
        ..Default::default()
    };
    meta.seeds.insert("cell".into(), cell.spec.seed);
    meta.metadata.insert("role".into(), role.into());
    meta.metadata.insert("dataset".into(), cell.data.name.clone());
    meta.metadata.insert("dataset_hash".into(), cell.data.content_hash());
    meta.metadata.insert("split".into(), serde_json::to_string(&cell.spec)?);
    meta.metadata.insert("config_hash".into(), cell.cfg.hash());
    Ok(meta)
}

/// Split of a saved model, after checking it was built from `data`.
fn saved_split(file: &ModelFile, data: &Dataset) -> Result<SplitSpec> {
    let expected = file.meta.metadata.get("dataset_hash").context("model lacks dataset hash")?;
    if *expected != data.content_hash() {
        bail!("model was trained on different data than `{}`", data.name);
    }
    let split = file.meta.metadata.get("split").context("model lacks split metadata")?;
    Ok(serde_json::from_str(split)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn model_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.model"))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Fetch(common) => {
            let cfg = common.resolve()?;
            for source in &cfg.datasets {
                let src: DatasetSource = source.parse()?;
                let (ds, origin) = match &src {
                    DatasetSource::OpenMl { id, label } => {
                        let label = cfg
                            .label_col
                            .as_ref()
                            .map(|s| s.parse().expect("infallible"))
                            .or_else(|| label.clone())
                            .unwrap_or(selfcert::data::LabelColumn::Last);
                        let (ds, origin) = fetch_openml(*id, &cfg.cache_dir(), &url_template(), &label)?;
                        (ds, Some(origin))
                    }
                    _ => (load_dataset(&cfg, source)?, None),
                };
                print_json(&serde_json::json!({
                    "dataset": ds.name,
                    "rows": ds.len(),
                    "features": ds.dim(),
                    "classes": ds.class_count,
                    "class_counts": ds.class_counts(),
                    "labels": ds.label_names,
                    "origin": origin.map(|o| format!("{o:?}").to_lowercase()),
                    "sha256": ds.content_hash(),
                }))?;
            }
        }
        Command::TrainErm(common) => {
            let mut cell = single_cell(&common, Mode::TraditionalErm)?;
            cell.spec.mode = Mode::TraditionalErm;
            let prep = prepare(&cell.data, &cell.spec)?;
            let run = run_erm(&prep, &cell.cfg, cell.spec.seed)?;
            std::fs::create_dir_all(&cell.cfg.out_dir)?;
            let path = model_path(&cell.cfg.out_dir, "erm");
            save_model(&path, &ModelFile {
                model: Model::Deterministic(run.weights),
                meta: meta_for(&cell, "erm")?,
            })?;
            eprintln!("saved {}", path.display());
            print_json(&run.bounds)?;
        }
        Command::TrainPnn(common) => {
            let cell = single_cell(&common, Mode::SelfCertified)?;
            if !cell.spec.mode.is_pnn() {
                bail!("train-pnn needs a PNN mode");
            }
            let prep = prepare(&cell.data, &cell.spec)?;
            let run = run_pnn(&prep, &cell.cfg, cell.spec.seed)?;
            std::fs::create_dir_all(&cell.cfg.out_dir)?;
            for (name, dist) in [("prior", run.prior), ("posterior", run.posterior)] {
                let path = model_path(&cell.cfg.out_dir, name);
                save_model(&path, &ModelFile {
                    model: Model::Gaussian(dist),
                    meta: meta_for(&cell, name)?,
                })?;
                eprintln!("saved {}", path.display());
            }
            print_json(&run.certificate)?;
        }
        Command::Certify(common) => {
            let cfg = common.resolve()?;
            let data = load_dataset(&cfg, &cfg.datasets[0])?;
            let posterior = load_model(model_path(&cfg.out_dir, "posterior"))?;
            let prior = load_model(model_path(&cfg.out_dir, "prior"))?;
            let spec = saved_split(&posterior, &data)?;
            if saved_split(&prior, &data)? != spec {
                bail!("prior and posterior come from different partitions");
            }
            let (Model::Gaussian(q), Model::Gaussian(p)) = (posterior.model, prior.model) else {
                bail!("certify needs Gaussian prior and posterior models");
            };
            let prep = prepare(&data, &spec)?;
            let cert = CertificationSet::from_partition(&prep.part, &prep.data);
            let mut c = compute_certificate(&q, &p, &cert, &cfg.certify_options(spec.seed))?;
            c.config_hash = cfg.hash();
            std::fs::write(cfg.out_dir.join("certificate.json"), c.to_json()?)?;
            std::fs::write(cfg.out_dir.join("certificate.csv"), c.to_csv()?)?;
            print_json(&c)?;
        }
        Command::Evaluate(common) => {
            let cfg = common.resolve()?;
            let data = load_dataset(&cfg, &cfg.datasets[0])?;
            let mut found = false;
            for name in ["erm", "posterior"] {
                let path = model_path(&cfg.out_dir, name);
                if !path.exists() {
                    continue;
                }
                found = true;
                let file = load_model(&path)?;
                let spec = saved_split(&file, &data)?;
                if !spec.mode.has_test_set() {
                    eprintln!("{name}: self-certified partition has no test set");
                    continue;
                }
                let prep = prepare(&data, &spec)?;
                let test = prep.role(Role::Test);
                match file.model {
                    Model::Deterministic(w) => {
                        print_json(&test_set_bounds(&w, &test, cfg.confidence.delta_test)?)?
                    }
                    Model::Gaussian(q) => print_json(&evaluate_posterior(
                        &q,
                        &test,
                        cfg.samples_per_example,
                        selfcert::rng::derive_seed(spec.seed, &[selfcert::rng::stream::EVALUATE]),
                    )?)?,
                }
            }
            if !found {
                bail!("no models in {}", cfg.out_dir.display());
            }
        }
        Command::Ablate(common) => {
            let cfg = common.resolve()?;
            let out = ablate(&cfg)?;
            eprintln!(
                "{} rows, {} failed cells; wrote {}",
                out.rows.len(),
                out.failures.len(),
                cfg.out_dir.display()
            );
        }
        Command::Report { results, out_dir } => {
            for f in report(&results, &out_dir)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
