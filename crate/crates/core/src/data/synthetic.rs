//! Two-class isotropic Gaussian blobs with a known generating distribution,
//! so that true risks can be estimated on arbitrarily many fresh points.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::keyed_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlobs {
    pub dim: usize,
    /// Distance between the two class means (along the all-ones direction).
    pub separation: f64,
    pub std: f64,
}

impl Default for GaussianBlobs {
    fn default() -> Self {
        Self {
            dim: 2,
            separation: 3.0,
            std: 1.0,
        }
    }
}

impl GaussianBlobs {
    /// Blobs far enough apart that 200 draws are separable in practice.
    pub fn separable() -> Self {
        Self {
            dim: 2,
            separation: 10.0,
            std: 1.0,
        }
    }

    /// Error of the optimal (linear) classifier: `Phi(-separation / (2 std))`.
    pub fn bayes_error(&self) -> f64 {
        let z = self.separation / (2.0 * self.std);
        0.5 * erfc(z / std::f64::consts::SQRT_2)
    }

    /// `n` i.i.d. draws: label uniform over {0, 1}, then the class Gaussian.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = keyed_rng(seed, &[0xB10B]);
        let offset = self.separation / (2.0 * (self.dim as f64).sqrt());
        let mut labels = Vec::with_capacity(n);
        let mut features = Array2::zeros((n, self.dim));
        for mut row in features.rows_mut() {
            let y: usize = rng.random_range(0..2);
            let sign = if y == 0 { -1.0 } else { 1.0 };
            for x in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x = sign * offset + self.std * z;
            }
            labels.push(y);
        }
        Dataset::new("blobs", features, labels, vec!["0".into(), "1".into()])
            .expect("generated data is well formed")
    }
}

/// Complementary error function, Chebyshev fit with fractional error below
/// 1.2e-7 everywhere.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bayes_error_reference() {
        // Phi(-1.5) = 0.0668072012688581
        assert!((GaussianBlobs::default().bayes_error() - 0.066_807_201_268_858_1).abs() < 1e-7);
    }

    #[test]
    fn sampling_is_seeded_and_balanced() {
        let b = GaussianBlobs::default();
        let a = b.sample(4000, 5);
        assert_eq!(a, b.sample(4000, 5));
        assert_ne!(a, b.sample(4000, 6));
        let ones = a.labels.iter().filter(|&&y| y == 1).count() as f64 / 4000.0;
        assert!((ones - 0.5).abs() < 0.05);
    }
}
