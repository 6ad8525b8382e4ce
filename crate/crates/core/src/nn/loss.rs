use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Cross-entropy with `p_y` floored at `p_min`, rescaled to `[0, 1]`.
    BoundedCrossEntropy,
    /// Plain (unbounded) cross-entropy.
    CrossEntropy,
    ZeroOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub p_min: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::BoundedCrossEntropy,
            p_min: 1e-4,
        }
    }
}

impl LossSpec {
    pub fn validate(&self, num_classes: usize) -> crate::Result<()> {
        if !(self.p_min > 0.0 && self.p_min < 1.0 / num_classes as f64) {
            return Err(crate::Error::InvalidConfig(format!(
                "p_min {} must lie in (0, 1/{num_classes})",
                self.p_min
            )));
        }
        Ok(())
    }
}

fn log_softmax_at(logits: ArrayView1<f64>, y: usize) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let shifted = logits.mapv(|v| (v - max).exp());
    let sum = shifted.sum();
    let log_py = logits[y] - max - sum.ln();
    (log_py, shifted / sum)
}

/// Bounded cross-entropy `ln(1 / max(p_y, p_min)) / ln(1 / p_min)` and its
/// gradient with respect to the logits. The gradient vanishes while the floor
/// is active.
pub fn bounded_xent(logits: ArrayView1<f64>, y: usize, p_min: f64) -> (f64, Array1<f64>) {
    let (log_py, mut probs) = log_softmax_at(logits, y);
    let ln_floor = p_min.ln();
    let scale = -ln_floor;
    if log_py < ln_floor {
        probs.fill(0.0);
        return (1.0, probs);
    }
    probs[y] -= 1.0;
    probs /= scale;
    ((-log_py / scale).clamp(0.0, 1.0), probs)
}

/// Plain cross-entropy `-ln p_y` and its logit gradient.
pub fn cross_entropy(logits: ArrayView1<f64>, y: usize) -> (f64, Array1<f64>) {
    let (log_py, mut probs) = log_softmax_at(logits, y);
    probs[y] -= 1.0;
    (-log_py, probs)
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax<T: PartialOrd + Copy>(values: impl IntoIterator<Item = T>) -> usize {
    let mut it = values.into_iter().enumerate();
    let (mut best, mut best_v) = it.next().expect("nonempty logits");
    for (i, v) in it {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// 0-1 loss of the arg-max prediction.
pub fn zero_one(logits: ArrayView1<f64>, y: usize) -> f64 {
    if argmax(logits.iter().copied()) == y {
        0.0
    } else {
        1.0
    }
}
