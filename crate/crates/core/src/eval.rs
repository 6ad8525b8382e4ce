//! Single-precision inference for 0-1 error counting.
//!
//! Monte Carlo certification evaluates tens of thousands of sampled networks
//! on the certification set; those forward passes run in `f32`. The 0-1 path
//! returns integer error counts, so aggregating them downstream is exact.
//! Every 0-1 evaluation in the crate (deterministic, posterior-mean and
//! stochastic) goes through here so that they agree on near-ties.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::data::Dataset;
use crate::nn::{bounded_xent, loss::argmax, FcnArchitecture, WeightSet, NUM_LAYERS};

/// Rows per forward chunk; bounds activation memory on large sets.
const CHUNK: usize = 4096;

/// Network parameters converted to `f32`, reusable as a sampling buffer.
#[derive(Debug, Clone)]
pub struct EvalNet {
    weights: Vec<Array2<f32>>,
    biases: Vec<Array1<f32>>,
}

impl EvalNet {
    pub fn zeros(arch: &FcnArchitecture) -> Self {
        let sizes = arch.layer_sizes();
        Self {
            weights: (0..NUM_LAYERS)
                .map(|l| Array2::zeros((sizes[l], sizes[l + 1])))
                .collect(),
            biases: (0..NUM_LAYERS).map(|l| Array1::zeros(sizes[l + 1])).collect(),
        }
    }

    pub fn from_weights(w: &WeightSet) -> Self {
        let mut net = Self::zeros(w.arch());
        net.fill_from(w.params().iter().copied());
        net
    }

    /// Overwrites all parameters, in the flat layout order, from `values`.
    pub fn fill_from(&mut self, mut values: impl Iterator<Item = f64>) {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for x in w.iter_mut().chain(b.iter_mut()) {
                *x = values.next().expect("enough parameters") as f32;
            }
        }
    }

    pub fn logits(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let mut a = x.to_owned();
        for l in 0..NUM_LAYERS {
            let mut z = a.dot(&self.weights[l]);
            z += &self.biases[l];
            if l + 1 < NUM_LAYERS {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Number of rows whose arg-max prediction differs from the label.
    pub fn count_errors(&self, x: ArrayView2<f32>, y: &[usize]) -> u64 {
        let mut errors = 0;
        for (chunk, labels) in x.axis_chunks_iter(Axis(0), CHUNK).zip(y.chunks(CHUNK)) {
            let logits = self.logits(chunk);
            errors += logits
                .rows()
                .into_iter()
                .zip(labels)
                .filter(|(row, &label)| argmax(row.iter().copied()) != label)
                .count() as u64;
        }
        errors
    }

    /// Sum of the bounded cross-entropy over all rows.
    pub fn bounded_xent_sum(&self, x: ArrayView2<f32>, y: &[usize], p_min: f64) -> f64 {
        let mut total = 0.0;
        for (chunk, labels) in x.axis_chunks_iter(Axis(0), CHUNK).zip(y.chunks(CHUNK)) {
            let logits = self.logits(chunk).mapv(f64::from);
            for (row, &label) in logits.rows().into_iter().zip(labels) {
                total += bounded_xent(row, label, p_min).0;
            }
        }
        total
    }
}

/// Features of `ds` as `f32`.
pub fn features_f32(ds: &Dataset) -> Array2<f32> {
    ds.features.mapv(|v| v as f32)
}

/// 0-1 error count of fixed weights on a dataset.
pub fn error_count(w: &WeightSet, ds: &Dataset) -> u64 {
    EvalNet::from_weights(w).count_errors(features_f32(ds).view(), &ds.labels)
}

/// Mean 0-1 error of fixed weights; 0 on an empty set.
pub fn error_rate(w: &WeightSet, ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    error_count(w, ds) as f64 / ds.len() as f64
}
