//! Datasets, standardisation, stratified splitting and the data partitions
//! used by the three learning modes.

mod csv_io;
pub mod openml;
pub mod synthetic;

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::{keyed_rng, stream};
use crate::{Error, Result};

pub use csv_io::{load_csv, load_csv_reader, LabelColumn};

/// A labelled table: `n x d` real features and class indices in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Original label value for each class index.
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let class_count = label_names.len();
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::InvalidConfig(format!(
                "label index {bad} out of range for {class_count} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite feature value".into()));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            class_count,
            label_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows `indices` (in the given order), keeping the label dictionary.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            label_names: self.label_names.clone(),
        }
    }

    /// SHA-256 over dimensions, feature bits and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.class_count as u64).to_le_bytes());
        for v in self.features.iter() {
            h.update(v.to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Per-feature z-scoring fitted on one dataset and applicable to any other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Features whose spread is below this are only centred.
pub const MIN_STD: f64 = 1e-12;

impl Standardizer {
    pub fn fit(fit_on: &Dataset) -> Result<Self> {
        if fit_on.is_empty() {
            return Err(Error::EmptySplit("standardisation fit set".into()));
        }
        let n = fit_on.len() as f64;
        let mean: Array1<f64> = fit_on.features.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(fit_on.dim());
        for row in fit_on.features.rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self {
            mean: mean.to_vec(),
            std,
        })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: ds.dim(),
            });
        }
        let mut out = ds.clone();
        for mut row in out.features.rows_mut() {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }
}

/// `floor(fraction * n)` with a guard against representation error
/// (`0.7 * 1000` must give 700).
fn floor_share(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Size of the `fraction` side of an `n`-element split: the smaller side is
/// rounded down and the remainder goes to the larger side.
pub fn split_size(fraction: f64, n: usize) -> usize {
    if fraction <= 0.5 {
        floor_share(fraction, n)
    } else {
        n - floor_share(1.0 - fraction, n)
    }
}

/// Chooses `count` of `pool` with per-class proportional allocation. Classes
/// get `floor(share * n_c)` each and the leftover goes one apiece to the
/// classes with the largest fractional parts (lower class index on ties).
/// Returns `(chosen, rest)`, each sorted.
fn stratified_take(
    labels: &[usize],
    class_count: usize,
    pool: &[usize],
    count: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for &i in pool {
        by_class[labels[i]].push(i);
    }
    let share = if pool.is_empty() {
        0.0
    } else {
        count as f64 / pool.len() as f64
    };
    let mut quotas: Vec<usize> = by_class
        .iter()
        .map(|c| floor_share(share, c.len()).min(c.len()))
        .collect();
    let mut leftover = count.saturating_sub(quotas.iter().sum());
    let mut order: Vec<usize> = (0..class_count).collect();
    order.sort_by(|&a, &b| {
        let fa = share * by_class[a].len() as f64 - quotas[a] as f64;
        let fb = share * by_class[b].len() as f64 - quotas[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    while leftover > 0 {
        let before = leftover;
        for &c in &order {
            if leftover == 0 {
                break;
            }
            if quotas[c] < by_class[c].len() {
                quotas[c] += 1;
                leftover -= 1;
            }
        }
        if before == leftover {
            break;
        }
    }
    let mut chosen = Vec::with_capacity(count);
    let mut rest = Vec::with_capacity(pool.len().saturating_sub(count));
    for (c, members) in by_class.iter_mut().enumerate() {
        let mut rng = keyed_rng(seed, &[c as u64]);
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..quotas[c]]);
        rest.extend_from_slice(&members[quotas[c]..]);
    }
    chosen.sort_unstable();
    rest.sort_unstable();
    (chosen, rest)
}

/// Stratified split of `ds`: `part_a` receives `fraction` of every class.
pub fn stratified_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    check_fraction("split fraction", fraction, true)?;
    if let Some(c) = ds.class_counts().iter().position(|&k| k == 0) {
        return Err(Error::ClassVanished {
            class: c,
            context: "stratified split needs every class present".into(),
        });
    }
    let pool: Vec<usize> = (0..ds.len()).collect();
    let count = split_size(fraction, ds.len());
    let (a, b) = stratified_take(&ds.labels, ds.class_count, &pool, count, seed);
    Ok((ds.subset(&a), ds.subset(&b)))
}

fn check_fraction(name: &str, f: f64, allow_one: bool) -> Result<()> {
    let ok = f >= 0.0 && if allow_one { f <= 1.0 } else { f < 1.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} {f} out of range")))
    }
}

/// Number of examples dropped when removing `fraction` of `n`.
///
/// Rounded to nearest: 98% of Spambase's 4601 rows leaves 92 and of
/// Bioresponse's 3751 leaves 75.
pub fn removal_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Indices (sorted) that survive random removal of `fraction` of the rows.
pub fn removal_keep_indices(
    ds: &Dataset,
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<Vec<usize>> {
    check_fraction("removal fraction", fraction, false)?;
    let n = ds.len();
    let keep_count = n - removal_count(fraction, n);
    let all: Vec<usize> = (0..n).collect();
    let keep = if stratified {
        stratified_take(&ds.labels, ds.class_count, &all, keep_count, seed).0
    } else {
        let mut idx = all;
        let mut rng = keyed_rng(seed, &[0]);
        idx.shuffle(&mut rng);
        idx.truncate(keep_count);
        idx.sort_unstable();
        idx
    };
    let mut present = vec![false; ds.class_count];
    for &i in &keep {
        present[ds.labels[i]] = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::ClassVanished {
            class: c,
            context: format!("removing {fraction} of the data; try another seed"),
        });
    }
    Ok(keep)
}

/// Uniformly removes `round(fraction * n)` examples.
pub fn remove_random(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    Ok(ds.subset(&removal_keep_indices(ds, fraction, seed, false)?))
}

/// How data is divided between learning and certification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// PNN trained and certified on all data; no test set.
    SelfCertified,
    /// PNN with a held-out test set.
    TraditionalPnn,
    /// Deterministic network with a held-out test set and test-set bounds.
    TraditionalErm,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::SelfCertified, Mode::TraditionalPnn, Mode::TraditionalErm];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SelfCertified => "self-certified",
            Mode::TraditionalPnn => "traditional-pnn",
            Mode::TraditionalErm => "traditional-erm",
        }
    }

    pub fn is_pnn(self) -> bool {
        self != Mode::TraditionalErm
    }

    pub fn has_test_set(self) -> bool {
        self != Mode::SelfCertified
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    /// Share of the training data used for the prior (including prior validation).
    pub prior_fraction: f64,
    /// Share of the training data held back to validate the prior; at least one example.
    pub prior_val_fraction: f64,
    pub removal_fraction: f64,
    pub stratified_removal: bool,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.10,
            prior_fraction: 0.5,
            prior_val_fraction: 0.01,
            removal_fraction: 0.0,
            stratified_removal: false,
            mode: Mode::SelfCertified,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        check_fraction("test_fraction", self.test_fraction, false)?;
        check_fraction("prior_fraction", self.prior_fraction, false)?;
        check_fraction("prior_val_fraction", self.prior_val_fraction, false)?;
        check_fraction("removal_fraction", self.removal_fraction, false)?;
        if self.prior_fraction + self.prior_val_fraction >= 1.0 {
            return Err(Error::InvalidConfig(
                "prior_fraction + prior_val_fraction must be below 1".into(),
            ));
        }
        Ok(())
    }
}

/// The data roles of one run. Every index refers to a row of `data`, the
/// dataset after random removal; each role is sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub data: Dataset,
    pub spec: SplitSpec,
    /// Prior-mean training data.
    pub s_pri: Vec<usize>,
    /// Prior checkpoint selection; part of posterior training, never certified on.
    pub s_prival: Vec<usize>,
    /// Certification data, disjoint from everything the prior saw.
    pub s_cert: Vec<usize>,
    /// Posterior (or ERM) training data.
    pub s_full: Vec<usize>,
    /// Held-out test data; empty in self-certified mode.
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Prior,
    PriorValidation,
    Certification,
    Train,
    Test,
}

impl Partition {
    pub fn indices(&self, role: Role) -> &[usize] {
        match role {
            Role::Prior => &self.s_pri,
            Role::PriorValidation => &self.s_prival,
            Role::Certification => &self.s_cert,
            Role::Train => &self.s_full,
            Role::Test => &self.test,
        }
    }

    pub fn subset(&self, role: Role) -> Dataset {
        self.data.subset(self.indices(role))
    }

    /// Everything the prior mean may depend on.
    pub fn prior_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.s_pri.iter().chain(&self.s_prival).copied().collect();
        v.sort_unstable();
        v
    }

    /// Checks the structural invariants: disjoint roles whose union is the
    /// post-removal data, and `s_full = s_pri + s_prival + s_cert` in PNN modes.
    pub fn check(&self) -> Result<()> {
        let train: BTreeSet<usize> = self.s_full.iter().copied().collect();
        let test: BTreeSet<usize> = self.test.iter().copied().collect();
        if train.len() != self.s_full.len() || test.len() != self.test.len() {
            return Err(Error::InvalidConfig("duplicate indices in partition".into()));
        }
        if !train.is_disjoint(&test) {
            return Err(Error::InvalidConfig("train and test overlap".into()));
        }
        if train.len() + test.len() != self.data.len() {
            return Err(Error::InvalidConfig("partition is not exhaustive".into()));
        }
        if self.spec.mode.is_pnn() {
            let pri: BTreeSet<usize> = self.prior_indices().into_iter().collect();
            let cert: BTreeSet<usize> = self.s_cert.iter().copied().collect();
            if !pri.is_disjoint(&cert) {
                return Err(Error::CertificationOverlap {
                    overlap: pri.intersection(&cert).count(),
                });
            }
            let union: BTreeSet<usize> = pri.union(&cert).copied().collect();
            if union != train || pri.len() != self.s_pri.len() + self.s_prival.len() {
                return Err(Error::InvalidConfig(
                    "prior and certification roles do not tile the training data".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Removal, then the test split (traditional modes), then the prior /
/// prior-validation / certification split of the training data (PNN modes).
pub fn make_partitions(ds: &Dataset, spec: &SplitSpec) -> Result<Partition> {
    spec.validate()?;
    let keep = removal_keep_indices(
        ds,
        spec.removal_fraction,
        crate::rng::derive_seed(spec.seed, &[stream::REMOVAL]),
        spec.stratified_removal,
    )?;
    let data = ds.subset(&keep);
    let all: Vec<usize> = (0..data.len()).collect();
    let seed = |s| crate::rng::derive_seed(spec.seed, &[s]);

    let (test, train) = if spec.mode.has_test_set() {
        let count = split_size(spec.test_fraction, data.len());
        stratified_take(&data.labels, data.class_count, &all, count, seed(stream::TEST_SPLIT))
    } else {
        (Vec::new(), all)
    };
    if train.is_empty() {
        return Err(Error::EmptySplit("training data".into()));
    }
    if spec.mode.has_test_set() && test.is_empty() {
        return Err(Error::EmptySplit("test set".into()));
    }

    let (s_pri, s_prival, s_cert) = if spec.mode.is_pnn() {
        let prior_count = split_size(spec.prior_fraction, train.len());
        let (prior, cert) = stratified_take(
            &data.labels,
            data.class_count,
            &train,
            prior_count,
            seed(stream::PRIOR_SPLIT),
        );
        let val_count = floor_share(spec.prior_val_fraction, train.len()).max(1);
        let (prival, pri) = stratified_take(
            &data.labels,
            data.class_count,
            &prior,
            val_count.min(prior.len()),
            seed(stream::PRIOR_VAL_SPLIT),
        );
        for (name, part) in [("s_pri", &pri), ("s_prival", &prival), ("s_cert", &cert)] {
            if part.is_empty() {
                return Err(Error::EmptySplit(name.into()));
            }
        }
        (pri, prival, cert)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };

    let partition = Partition {
        data,
        spec: *spec,
        s_pri,
        s_prival,
        s_cert,
        s_full: train,
        test,
    };
    partition.check()?;
    Ok(partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(n_per_class: &[usize]) -> Dataset {
        let n: usize = n_per_class.iter().sum();
        let mut labels = Vec::with_capacity(n);
        for (c, &k) in n_per_class.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(k));
        }
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let names = (0..n_per_class.len()).map(|c| c.to_string()).collect();
        Dataset::new("toy", features, labels, names).unwrap()
    }

    #[test]
    fn standardize_centres_and_scales() {
        let ds = Dataset::new(
            "s",
            array![[1.0, 5.0, 3.0], [2.0, 5.0, 7.0], [6.0, 5.0, -1.0]],
            vec![0, 1, 0],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let st = Standardizer::fit(&ds).unwrap();
        let z = st.apply(&ds).unwrap();
        for j in [0, 2] {
            let col = z.features.column(j);
            let mean = col.sum() / 3.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
        // Constant column is centred only.
        assert!(z.features.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_does_not_centre_other_data() {
        let train = toy(&[5, 5]);
        let mut test = toy(&[2, 2]);
        test.features.mapv_inplace(|v| v + 100.0);
        let st = Standardizer::fit(&train).unwrap();
        let z = st.apply(&test).unwrap();
        assert!(z.features.column(0).sum().abs() > 1.0);
    }

    #[test]
    fn stratified_halves() {
        let ds = toy(&[50, 50]);
        let (a, b) = stratified_split(&ds, 0.5, 3).unwrap();
        assert_eq!(a.class_counts(), vec![25, 25]);
        assert_eq!(b.class_counts(), vec![25, 25]);
        let (a, b) = stratified_split(&ds, 0.0, 3).unwrap();
        assert!(a.is_empty());
        assert_eq!(b.len(), 100);
    }

    #[test]
    fn stratified_split_rejects_missing_class() {
        let mut ds = toy(&[3, 3]);
        ds.class_count = 3;
        ds.label_names.push("2".into());
        assert!(matches!(
            stratified_split(&ds, 0.5, 0),
            Err(Error::ClassVanished { class: 2, .. })
        ));
    }

    #[test]
    fn stratified_split_proportions_spambase_shape() {
        // Spambase class sizes: 2788 ham, 1813 spam.
        let ds = toy(&[2788, 1813]);
        let (test, _) = stratified_split(&ds, 0.1, 11).unwrap();
        assert_eq!(test.len(), 460);
        for (got, total) in test.class_counts().iter().zip([2788, 1813]) {
            assert!((*got as f64 - 0.1 * total as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn removal_counts() {
        assert_eq!(4601 - removal_count(0.98, 4601), 92);
        assert_eq!(3751 - removal_count(0.98, 3751), 75);
        let ds = toy(&[60, 40]);
        assert_eq!(remove_random(&ds, 0.0, 1).unwrap(), ds);
        assert_eq!(remove_random(&ds, 0.75, 1).unwrap().len(), 25);
    }

    #[test]
    fn removal_that_drops_a_class_errors() {
        let ds = toy(&[99, 1]);
        let failed = (0..20).any(|seed| remove_random(&ds, 0.9, seed).is_err());
        assert!(failed);
    }

    #[test]
    fn self_certified_partition_sizes() {
        let ds = toy(&[500, 500]);
        let spec = SplitSpec {
            prior_fraction: 0.7,
            mode: Mode::SelfCertified,
            ..SplitSpec::default()
        };
        let p = make_partitions(&ds, &spec).unwrap();
        assert_eq!(p.s_pri.len(), 690);
        assert_eq!(p.s_prival.len(), 10);
        assert_eq!(p.s_cert.len(), 300);
        assert_eq!(p.s_full.len(), 1000);
        assert!(p.test.is_empty());
    }

    #[test]
    fn erm_partition_has_only_train_and_test() {
        let ds = toy(&[500, 500]);
        let spec = SplitSpec {
            mode: Mode::TraditionalErm,
            ..SplitSpec::default()
        };
        let p = make_partitions(&ds, &spec).unwrap();
        assert_eq!(p.test.len(), 100);
        assert_eq!(p.s_full.len(), 900);
        assert!(p.s_pri.is_empty() && p.s_prival.is_empty() && p.s_cert.is_empty());
    }

    #[test]
    fn tiny_data_still_gets_a_prior_validation_example() {
        let ds = toy(&[46, 46]);
        let spec = SplitSpec {
            mode: Mode::TraditionalPnn,
            ..SplitSpec::default()
        };
        let p = make_partitions(&ds, &spec).unwrap();
        assert_eq!(p.s_prival.len(), 1);
        assert_eq!(p.test.len(), 9);
    }
}
