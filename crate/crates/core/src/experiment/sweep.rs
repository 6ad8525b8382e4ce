use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_dataset, run_cell, ExperimentConfig, ResultsRow};
use crate::data::{Dataset, Mode};
use crate::{Error, Result};

pub const RESULTS_COLUMNS: &[&str] = &[
    "dataset",
    "removal_fraction",
    "mode",
    "seed",
    "prior_fraction",
    "stochastic_test_err",
    "mean_test_err",
    "mc_avg",
    "kl_div",
    "certificate",
    "quad_bound",
    "chernoff",
    "binomial",
    "n_cert",
    "n_test",
    "m",
    "wall_time",
];

pub const SUMMARY_COLUMNS: &[&str] = &[
    "dataset",
    "removal_fraction",
    "mode",
    "metric",
    "n",
    "mean",
    "se",
    "ci_low",
    "ci_high",
];

pub const FAILURE_COLUMNS: &[&str] = &["dataset", "removal_fraction", "mode", "seed", "error"];

/// Mean and 95% normal-approximation interval of one metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub removal_fraction: f64,
    pub mode: Mode,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// A cell that could not be run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub dataset: String,
    pub removal_fraction: f64,
    pub mode: Mode,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutput {
    pub rows: Vec<ResultsRow>,
    pub failures: Vec<FailureRow>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// `(mean, se, ci_low, ci_high)` with `se = sd / sqrt(n)` (sample sd).
pub(crate) fn mean_ci(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    (mean, se, mean - 1.96 * se, mean + 1.96 * se)
}

type Metric = (&'static str, fn(&ResultsRow) -> Option<f64>);

const METRICS: &[Metric] = &[
    ("stochastic_test_err", |r| r.stochastic_test_err),
    ("mean_test_err", |r| r.mean_test_err),
    ("mc_avg", |r| r.mc_avg),
    ("kl_div", |r| r.kl_div),
    ("certificate", |r| r.certificate),
    ("quad_bound", |r| r.quad_bound),
    ("chernoff", |r| r.chernoff),
    ("binomial", |r| r.binomial),
];

/// Per (dataset, removal, mode) statistics, in order of first appearance.
pub fn summarise(rows: &[ResultsRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(String, f64, Mode, Vec<&ResultsRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|g| {
            g.0 == r.dataset && g.1.to_bits() == r.removal_fraction.to_bits() && g.2 == r.mode
        }) {
            Some(g) => g.3.push(r),
            None => groups.push((r.dataset.clone(), r.removal_fraction, r.mode, vec![r])),
        }
    }
    let mut out = Vec::new();
    for (dataset, removal, mode, members) in groups {
        for (name, get) in METRICS {
            let values: Vec<f64> = members.iter().filter_map(|r| get(r)).collect();
            if values.is_empty() {
                continue;
            }
            let (mean, se, ci_low, ci_high) = mean_ci(&values);
            out.push(SummaryRow {
                dataset: dataset.clone(),
                removal_fraction: removal,
                mode,
                metric: name.to_string(),
                n: values.len(),
                mean,
                se,
                ci_low,
                ci_high,
            });
        }
    }
    out
}

/// Writes `rows` under an explicit header, so empty tables still have one.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    for col in RESULTS_COLUMNS {
        if !header.iter().any(|h| h == col) {
            return Err(Error::InvalidConfig(format!("results file lacks column `{col}`")));
        }
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Serialize)]
struct RunMetadata {
    config_hash: String,
    profile: super::Profile,
    deviations_from_paper: Vec<String>,
    datasets: Vec<(String, String)>,
    cells: usize,
    failures: usize,
    created_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'static str>,
}

/// Runs every (dataset, removal, mode, seed) cell and writes `results.csv`,
/// `summary.csv`, `failures.csv`, `config.toml` and `metadata.json` into
/// `cfg.out_dir`.
pub fn ablate(cfg: &ExperimentConfig) -> Result<AblationOutput> {
    cfg.validate()?;
    let datasets: Vec<Dataset> = cfg
        .datasets
        .iter()
        .map(|s| load_dataset(cfg, s))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (d, _) in datasets.iter().enumerate() {
        for &removal in &cfg.removals {
            for &mode in &cfg.modes {
                for seed in cfg.cell_seeds() {
                    cells.push((d, removal, mode, seed));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.cell_workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<ResultsRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(d, removal, mode, seed)| run_cell(cfg, &datasets[d], removal, mode, seed))
            .collect()
    });

    let (mut rows, mut failures) = (Vec::new(), Vec::new());
    for (&(d, removal, mode, seed), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(FailureRow {
                dataset: datasets[d].name.clone(),
                removal_fraction: removal,
                mode,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let summary = summarise(&rows);

    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let files: Vec<PathBuf> = ["results.csv", "summary.csv", "failures.csv", "config.toml", "metadata.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_csv(&files[0], RESULTS_COLUMNS, &rows)?;
    write_csv(&files[1], SUMMARY_COLUMNS, &summary)?;
    write_csv(&files[2], FAILURE_COLUMNS, &failures)?;
    fs::write(&files[3], cfg.to_toml()?)?;
    let meta = RunMetadata {
        config_hash: cfg.hash(),
        profile: cfg.profile,
        deviations_from_paper: cfg.deviations(),
        datasets: datasets
            .iter()
            .map(|d| (d.name.clone(), d.content_hash()))
            .collect(),
        cells: cells.len(),
        failures: failures.len(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        note: (cfg.prior_fractions.len() > 1).then_some(
            "prior fraction chosen per cell by smallest certificate; no union bound over the grid",
        ),
    };
    fs::write(&files[4], serde_json::to_vec_pretty(&meta)?)?;
    Ok(AblationOutput {
        rows,
        failures,
        summary,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Profile;

    fn row(seed: u64, cert: f64) -> ResultsRow {
        ResultsRow {
            dataset: "d".into(),
            removal_fraction: 0.5,
            mode: Mode::SelfCertified,
            seed,
            prior_fraction: Some(0.5),
            stochastic_test_err: None,
            mean_test_err: None,
            mc_avg: Some(0.1),
            kl_div: Some(3.0),
            certificate: Some(cert),
            quad_bound: Some(cert + 0.01),
            chernoff: None,
            binomial: None,
            n_cert: Some(100),
            n_test: None,
            m: Some(10),
            wall_time: 0.5,
        }
    }

    #[test]
    fn header_constant_matches_serialisation() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(row(0, 0.2)).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), RESULTS_COLUMNS.join(","));
    }

    #[test]
    fn summary_statistics() {
        let one = summarise(&[row(0, 0.2)]);
        let cert = one.iter().find(|s| s.metric == "certificate").unwrap();
        assert_eq!((cert.mean, cert.ci_low, cert.ci_high), (0.2, 0.2, 0.2));
        assert!(one.iter().all(|s| s.metric != "chernoff"));

        let vals = [0.1, 0.2, 0.3, 0.25, 0.15];
        let rows: Vec<_> = vals.iter().enumerate().map(|(i, &v)| row(i as u64, v)).collect();
        let s = summarise(&rows);
        let cert = s.iter().find(|s| s.metric == "certificate").unwrap();
        // mean 0.2, sample sd sqrt(0.025 / 4) = 0.0790569
        assert!((cert.mean - 0.2).abs() < 1e-15);
        assert!((cert.se - 0.0790569415042095 / 5f64.sqrt()).abs() < 1e-12);
        assert!((cert.ci_high - cert.mean - 1.96 * cert.se).abs() < 1e-15);
        assert_eq!(cert.n, 5);
    }

    #[test]
    fn csv_round_trip_reproduces_summary() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<_> = (0..4).map(|i| row(i, 0.1 + 0.0123 * i as f64)).collect();
        let path = dir.path().join("results.csv");
        write_csv(&path, RESULTS_COLUMNS, &rows).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back, rows);
        assert_eq!(summarise(&back), summarise(&rows));

        let empty = dir.path().join("empty.csv");
        write_csv::<ResultsRow>(&empty, RESULTS_COLUMNS, &[]).unwrap();
        assert!(read_results(&empty).unwrap().is_empty());
        std::fs::write(&empty, "dataset,seed\n").unwrap();
        assert!(read_results(&empty).is_err());
    }

    #[test]
    fn small_sweep_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            datasets: vec!["blobs:n=200".into(), "blobs:n=40,seed=1".into()],
            removals: vec![0.0, 0.98],
            modes: vec![Mode::SelfCertified, Mode::TraditionalErm],
            prior_fractions: vec![0.5],
            seeds: 1,
            mc_samples: 50,
            prior_epochs: 3,
            posterior_epochs: 1,
            erm_epochs: 3,
            out_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::preset(Profile::Desk)
        };
        let out = ablate(&cfg).unwrap();
        assert_eq!(out.rows.len() + out.failures.len(), 8);
        // 40 points at 98% removal leave one row: partitions fail.
        assert!(out.failures.iter().all(|f| f.removal_fraction == 0.98));
        assert!(!out.failures.is_empty());
        for f in &out.files {
            assert!(f.exists(), "{f:?}");
        }
        assert_eq!(read_results(&out.files[0]).unwrap(), out.rows);
        let echoed = ExperimentConfig::load(&out.files[3], None).unwrap();
        assert_eq!(echoed, cfg);
    }
}
