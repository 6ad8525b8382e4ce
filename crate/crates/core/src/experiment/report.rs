use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::{mean_ci, read_results, write_csv};
use super::ResultsRow;
use crate::data::Mode;
use crate::Result;

/// Files written by [`report`], in order.
pub const REPORT_FILES: [&str; 3] = ["fig2_left.csv", "fig2_right.csv", "fig3.csv"];

const POINT_COLUMNS: &[&str] = &["series", "dataset", "removal_fraction", "n", "mean", "ci_low", "ci_high"];

/// One point of a plotted curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub series: String,
    /// `all` when pooled over the configured datasets.
    pub dataset: String,
    pub removal_fraction: f64,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

type Getter = fn(&ResultsRow) -> Option<f64>;

/// Points for `series` over all removal levels, pooling rows of `mode`
/// (restricted to `dataset` when given).
fn curve(rows: &[ResultsRow], series: &str, mode: Mode, dataset: Option<&str>, get: Getter) -> Vec<SeriesPoint> {
    let mut removals: Vec<f64> = rows.iter().map(|r| r.removal_fraction).collect();
    removals.sort_by(f64::total_cmp);
    removals.dedup();
    removals
        .into_iter()
        .filter_map(|removal| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == mode && r.removal_fraction == removal)
                .filter(|r| dataset.map_or(true, |d| r.dataset == d))
                .filter_map(get)
                .collect();
            if values.is_empty() {
                return None;
            }
            let (mean, _, ci_low, ci_high) = mean_ci(&values);
            Some(SeriesPoint {
                series: series.to_string(),
                dataset: dataset.unwrap_or("all").to_string(),
                removal_fraction: removal,
                n: values.len(),
                mean,
                ci_low,
                ci_high,
            })
        })
        .collect()
}

/// Plot data for the three panels: test errors of PNNs and ERM, certificates
/// of the two PNN partitions, and certificates against test-set bounds per
/// dataset.
pub fn report_rows(rows: &[ResultsRow]) -> [Vec<SeriesPoint>; 3] {
    let mut left = curve(rows, "pnn-stochastic", Mode::TraditionalPnn, None, |r| r.stochastic_test_err);
    left.extend(curve(rows, "pnn-mean", Mode::TraditionalPnn, None, |r| r.mean_test_err));
    left.extend(curve(rows, "erm", Mode::TraditionalErm, None, |r| r.mean_test_err));

    let mut right = curve(rows, "self-certified", Mode::SelfCertified, None, |r| r.certificate);
    right.extend(curve(rows, "traditional-pnn", Mode::TraditionalPnn, None, |r| r.certificate));

    let mut datasets: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let mut fig3 = Vec::new();
    for d in datasets {
        fig3.extend(curve(rows, "certificate", Mode::SelfCertified, Some(d), |r| r.certificate));
        fig3.extend(curve(rows, "chernoff", Mode::TraditionalErm, Some(d), |r| r.chernoff));
        fig3.extend(curve(rows, "binomial", Mode::TraditionalErm, Some(d), |r| r.binomial));
    }
    [left, right, fig3]
}

/// Reads `results_csv` and writes the plot-data files plus
/// `report_meta.json` (the pooled dataset list) into `out_dir`.
pub fn report(results_csv: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let rows = read_results(results_csv)?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for (name, points) in REPORT_FILES.iter().zip(report_rows(&rows)) {
        let path = out_dir.join(name);
        write_csv(&path, POINT_COLUMNS, &points)?;
        files.push(path);
    }
    let mut datasets: Vec<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    datasets.dedup();
    datasets.sort_unstable();
    datasets.dedup();
    let meta = out_dir.join("report_meta.json");
    fs::write(&meta, serde_json::to_vec_pretty(&serde_json::json!({ "pooled_datasets": datasets }))?)?;
    files.push(meta);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::sweep::RESULTS_COLUMNS;

    fn erm_row(seed: u64, removal: f64, err: f64) -> ResultsRow {
        ResultsRow {
            dataset: "d".into(),
            removal_fraction: removal,
            mode: Mode::TraditionalErm,
            seed,
            prior_fraction: None,
            stochastic_test_err: None,
            mean_test_err: Some(err),
            mc_avg: None,
            kl_div: None,
            certificate: None,
            quad_bound: None,
            chernoff: Some(err + 0.2),
            binomial: Some(err + 0.1),
            n_cert: None,
            n_test: Some(10),
            m: None,
            wall_time: 1.0,
        }
    }

    #[test]
    fn empty_results_give_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let results = dir.path().join("results.csv");
        write_csv::<ResultsRow>(&results, RESULTS_COLUMNS, &[]).unwrap();
        let files = report(&results, dir.path()).unwrap();
        for f in &files[..3] {
            let text = fs::read_to_string(f).unwrap();
            assert_eq!(text.trim_end(), POINT_COLUMNS.join(","));
        }
    }

    #[test]
    fn single_cell_has_degenerate_interval() {
        let [left, _, fig3] = report_rows(&[erm_row(0, 0.5, 0.3)]);
        assert_eq!(left.len(), 1);
        assert_eq!((left[0].mean, left[0].ci_low, left[0].ci_high), (0.3, 0.3, 0.3));
        assert_eq!(fig3.len(), 2);
    }

    #[test]
    fn five_seed_mean() {
        let errs = [0.1, 0.15, 0.2, 0.12, 0.18];
        let rows: Vec<_> = errs.iter().enumerate().map(|(i, &e)| erm_row(i as u64, 0.0, e)).collect();
        let [left, ..] = report_rows(&rows);
        let hand = (0.1 + 0.15 + 0.2 + 0.12 + 0.18) / 5.0;
        assert!((left[0].mean - hand).abs() < 1e-15);
        assert_eq!(left[0].n, 5);
        assert!(left[0].ci_low < hand && hand < left[0].ci_high);
    }
}
