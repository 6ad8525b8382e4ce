//! Experiment configuration, dataset sources and the ablation harness.

mod pipeline;
mod report;
mod sweep;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::ConfidenceParams;
use crate::data::openml::{default_cache_dir, fetch_openml, lookup_alias, url_template, Origin};
use crate::data::synthetic::GaussianBlobs;
use crate::data::{load_csv, Dataset, LabelColumn, Mode};
use crate::nn::LossKind;
use crate::pnn::NoiseSampling;
use crate::{Error, Result};

pub use pipeline::{
    prepare, run_cell, run_erm, run_pnn, run_pnn_grid, ErmRun, PnnRun, Prepared, ResultsRow,
};
pub use report::{report, report_rows, SeriesPoint, REPORT_FILES};
pub use sweep::{
    ablate, read_results, summarise, write_csv, AblationOutput, FailureRow, SummaryRow,
};

/// Preset hyperparameter scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Full-scale values.
    Paper,
    /// Reduced sampling and epochs for a single workstation.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::InvalidConfig(format!("unknown profile `{s}`"))),
        }
    }
}

/// Which sample size the training objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveN {
    /// The posterior training set.
    Train,
    /// The certification set.
    Cert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Dataset sources, see [`DatasetSource`].
    pub datasets: Vec<String>,
    pub label_col: Option<String>,
    pub removals: Vec<f64>,
    pub modes: Vec<Mode>,
    pub prior_fractions: Vec<f64>,
    /// Seeds per cell; cell seeds are `seed_offset..seed_offset + seeds`.
    pub seeds: usize,
    pub seed_offset: u64,
    pub test_fraction: f64,
    pub prior_val_fraction: f64,
    pub stratified_removal: bool,
    pub confidence: ConfidenceParams,
    pub mc_samples: usize,
    pub samples_per_example: usize,
    pub sigma_0: f64,
    pub p_min: f64,
    pub prior_epochs: usize,
    pub posterior_epochs: usize,
    pub erm_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout: f64,
    pub erm_loss: LossKind,
    pub objective_n: ObjectiveN,
    pub sampling: NoiseSampling,
    pub max_grad_norm: Option<f64>,
    /// Also certify the bounded cross-entropy.
    pub xent_certificate: bool,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Threads for Monte Carlo evaluation; `None` uses the global pool.
    pub mc_workers: Option<usize>,
    /// Cells evaluated concurrently.
    pub cell_workers: usize,
}

impl ExperimentConfig {
    pub fn preset(profile: Profile) -> Self {
        let paper = Self {
            profile: Profile::Paper,
            datasets: vec!["spambase".into()],
            label_col: None,
            removals: vec![0.0, 0.25, 0.5, 0.75, 0.90, 0.95, 0.97, 0.98],
            modes: Mode::ALL.to_vec(),
            prior_fractions: vec![0.5, 0.6, 0.7, 0.8],
            seeds: 5,
            seed_offset: 0,
            test_fraction: 0.10,
            prior_val_fraction: 0.01,
            stratified_removal: false,
            confidence: ConfidenceParams::default(),
            mc_samples: 150_000,
            samples_per_example: crate::certify::DEFAULT_SAMPLES_PER_EXAMPLE,
            sigma_0: 0.005,
            p_min: 1e-4,
            prior_epochs: 500,
            posterior_epochs: 100,
            erm_epochs: 600,
            batch_size: 250,
            learning_rate: 1e-3,
            momentum: 0.95,
            dropout: 0.01,
            erm_loss: LossKind::BoundedCrossEntropy,
            objective_n: ObjectiveN::Train,
            sampling: NoiseSampling::PerBatch,
            max_grad_norm: None,
            xent_certificate: false,
            out_dir: PathBuf::from("results"),
            cache_dir: None,
            mc_workers: None,
            cell_workers: 1,
        };
        match profile {
            Profile::Paper => paper,
            Profile::Desk => Self {
                profile: Profile::Desk,
                mc_samples: 10_000,
                prior_epochs: 100,
                posterior_epochs: 30,
                erm_epochs: 150,
                ..paper
            },
        }
    }

    /// Parses a TOML file over the preset of its profile (or of `profile`
    /// when given, which wins over the file).
    pub fn from_toml_str(text: &str, profile: Option<Profile>) -> Result<Self> {
        let mut file: toml::Table =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let profile = match profile {
            Some(p) => p,
            None => match file.get("profile") {
                Some(toml::Value::String(s)) => s.parse()?,
                Some(_) => return Err(Error::InvalidConfig("profile must be a string".into())),
                None => Profile::Paper,
            },
        };
        file.remove("profile");
        let mut base = toml::Table::try_from(Self::preset(profile))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        merge(&mut base, file);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, profile: Option<Profile>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, profile)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.confidence.validate()?;
        if self.datasets.is_empty()
            || self.removals.is_empty()
            || self.modes.is_empty()
            || self.prior_fractions.is_empty()
        {
            return Err(Error::InvalidConfig("every grid must be nonempty".into()));
        }
        if self.seeds == 0 || self.mc_samples == 0 || self.samples_per_example == 0 {
            return Err(Error::InvalidConfig(
                "seeds, mc_samples and samples_per_example must be positive".into(),
            ));
        }
        if !(self.sigma_0 > 0.0) {
            return Err(Error::InvalidConfig("sigma_0 must be positive".into()));
        }
        if self.cell_workers == 0 {
            return Err(Error::InvalidConfig("cell_workers must be positive".into()));
        }
        for &r in &self.removals {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("removal {r} outside [0, 1)")));
            }
        }
        for &p in &self.prior_fractions {
            if !(p > 0.0 && p + self.prior_val_fraction < 1.0) {
                return Err(Error::InvalidConfig(format!("prior fraction {p} out of range")));
            }
        }
        Ok(())
    }

    /// Short digest of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Names of settings that differ from the paper preset.
    pub fn deviations(&self) -> Vec<String> {
        let mine = serde_json::to_value(self).expect("config serialises");
        let paper = serde_json::to_value(Self::preset(Profile::Paper)).expect("config serialises");
        let (Some(mine), Some(paper)) = (mine.as_object(), paper.as_object()) else {
            return Vec::new();
        };
        mine.iter()
            .filter(|(k, _)| !matches!(k.as_str(), "datasets" | "out_dir" | "cache_dir" | "label_col"))
            .filter(|(k, v)| paper.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(default_cache_dir)
    }

    pub fn cell_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds as u64).map(move |s| self.seed_offset + s)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Where a dataset comes from.
///
/// * `openml:<id>`
/// * a known alias (`spambase`, `bioresponse`, `har`, `mammography`)
/// * `blobs` or `blobs:n=2000,dim=2,sep=3,std=1,seed=0`
/// * anything else is a CSV path
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    OpenMl { id: u32, label: Option<LabelColumn> },
    Blobs { spec: GaussianBlobs, n: usize, seed: u64, name: String },
    Csv(PathBuf),
}

impl std::str::FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(id) = s.strip_prefix("openml:") {
            let id = id
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad OpenML id in `{s}`")))?;
            return Ok(DatasetSource::OpenMl { id, label: None });
        }
        if let Some((id, label)) = lookup_alias(s) {
            return Ok(DatasetSource::OpenMl {
                id,
                label: Some(label),
            });
        }
        if s == "blobs" || s.starts_with("blobs:") {
            let mut spec = GaussianBlobs::default();
            let (mut n, mut seed) = (2000, 0);
            for kv in s.strip_prefix("blobs:").unwrap_or("").split(',').filter(|t| !t.is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidConfig(format!("bad blobs option `{kv}`")))?;
                let bad = || Error::InvalidConfig(format!("bad value in `{kv}`"));
                match k {
                    "n" => n = v.parse().map_err(|_| bad())?,
                    "dim" => spec.dim = v.parse().map_err(|_| bad())?,
                    "sep" => spec.separation = v.parse().map_err(|_| bad())?,
                    "std" => spec.std = v.parse().map_err(|_| bad())?,
                    "seed" => seed = v.parse().map_err(|_| bad())?,
                    _ => return Err(Error::InvalidConfig(format!("unknown blobs option `{k}`"))),
                }
            }
            return Ok(DatasetSource::Blobs {
                spec,
                n,
                seed,
                name: s.to_string(),
            });
        }
        Ok(DatasetSource::Csv(PathBuf::from(s)))
    }
}

impl DatasetSource {
    /// Loads the dataset; `label` overrides the source's default label column.
    pub fn load(&self, label: Option<&LabelColumn>, cache_dir: &Path) -> Result<(Dataset, Option<Origin>)> {
        match self {
            DatasetSource::OpenMl { id, label: default } => {
                let label = label.or(default.as_ref()).cloned().unwrap_or(LabelColumn::Last);
                let (ds, origin) = fetch_openml(*id, cache_dir, &url_template(), &label)?;
                Ok((ds, Some(origin)))
            }
            DatasetSource::Blobs { spec, n, seed, name } => {
                let mut ds = spec.sample(*n, *seed);
                ds.name = name.clone();
                Ok((ds, None))
            }
            DatasetSource::Csv(path) => {
                Ok((load_csv(path, label.unwrap_or(&LabelColumn::Last))?, None))
            }
        }
    }
}

/// Loads `source` with the label column and cache of `cfg`.
pub fn load_dataset(cfg: &ExperimentConfig, source: &str) -> Result<Dataset> {
    let label: Option<LabelColumn> = cfg.label_col.as_ref().map(|s| s.parse().expect("infallible"));
    let src: DatasetSource = source.parse()?;
    Ok(src.load(label.as_ref(), &cfg.cache_dir())?.0)
}
