//! Fully connected ReLU networks with a flat parameter layout.
//!
//! Parameters are stored layer by layer as a row-major `fan_in x fan_out`
//! weight matrix followed by the `fan_out` biases. Posterior means and scales
//! use the same layout, so every elementwise operation on a distribution is a
//! plain slice operation.

mod backprop;
pub(crate) mod loss;
mod optim;
mod train;

use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{keyed_rng, stream};
use crate::{Error, Result};

pub use backprop::{
    backprop, fcn_forward, forward_batch, forward_cached, DropoutMasks, ForwardCache,
};
pub use loss::{bounded_xent, cross_entropy, zero_one, LossKind, LossSpec};
pub use optim::{clip_grad_norm, sgd_momentum_step, SgdMomentum};
pub(crate) use train::{check_data_dims, epoch_batches};
pub use train::{erm_train, erm_train_traced, TrainConfigErm, TrainTrace};

/// Width of both hidden layers in the standard architecture.
pub const HIDDEN_WIDTH: usize = 100;
/// Number of weight layers (the input layer is not counted).
pub const NUM_LAYERS: usize = 3;

/// `[input_dim, hidden_1, hidden_2, num_classes]`, ReLU on the hidden layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FcnArchitecture {
    layer_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

impl FcnArchitecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() != NUM_LAYERS + 1 {
            return Err(Error::InvalidConfig(format!(
                "expected {} layer sizes (input, two hidden, output), got {}",
                NUM_LAYERS + 1,
                layer_sizes.len()
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        Ok(Self { layer_sizes })
    }

    pub fn standard(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(vec![input_dim, HIDDEN_WIDTH, HIDDEN_WIDTH, num_classes])
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        self.layer_sizes[NUM_LAYERS]
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub(crate) fn slots(&self) -> Vec<LayerSlots> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                offset = bias.end;
                LayerSlots {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                }
            })
            .collect()
    }
}

/// Concrete parameters for one network evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    arch: FcnArchitecture,
    params: Vec<f64>,
}

impl WeightSet {
    pub fn zeros(arch: &FcnArchitecture) -> Self {
        Self {
            params: vec![0.0; arch.num_params()],
            arch: arch.clone(),
        }
    }

    pub fn from_params(arch: &FcnArchitecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.num_params(),
                actual: params.len(),
            });
        }
        Ok(Self {
            arch: arch.clone(),
            params,
        })
    }

    pub fn arch(&self) -> &FcnArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = &self.arch.slots()[layer];
        ArrayView2::from_shape((s.fan_in, s.fan_out), &self.params[s.weights.clone()])
            .expect("slot shape")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let s = &self.arch.slots()[layer];
        ArrayView1::from(&self.params[s.bias.clone()])
    }

    pub fn weights_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, f64> {
        let s = &self.arch.slots()[layer];
        ArrayViewMut2::from_shape((s.fan_in, s.fan_out), &mut self.params[s.weights.clone()])
            .expect("slot shape")
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, f64> {
        let s = &self.arch.slots()[layer];
        ArrayViewMut1::from(&mut self.params[s.bias.clone()])
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// Truncation point of the initialisation Gaussian, in standard deviations.
pub const INIT_TRUNCATION: f64 = 2.0;

/// Weights from a centred Gaussian with std `1/sqrt(fan_in)` truncated at two
/// standard deviations (by resampling); biases start at zero.
pub fn init_weights(arch: &FcnArchitecture, seed: u64) -> WeightSet {
    let mut rng = keyed_rng(seed, &[stream::INIT]);
    let mut w = WeightSet::zeros(arch);
    for slot in arch.slots() {
        let scale = 1.0 / (slot.fan_in as f64).sqrt();
        for p in &mut w.params[slot.weights] {
            let z = loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= INIT_TRUNCATION {
                    break z;
                }
            };
            *p = scale * z;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_invariants() {
        let a = FcnArchitecture::standard(58, 2).unwrap();
        assert_eq!(a.layer_sizes(), &[58, 100, 100, 2]);
        assert_eq!(a.num_params(), 58 * 100 + 100 + 100 * 100 + 100 + 100 * 2 + 2);
        assert!(FcnArchitecture::new(vec![2, 3, 2]).is_err());
        assert!(FcnArchitecture::new(vec![2, 0, 3, 2]).is_err());
        let slots = a.slots();
        assert_eq!(slots[2].bias.end, a.num_params());
    }

    #[test]
    fn init_is_truncated_and_seeded() {
        let arch = FcnArchitecture::new(vec![16, 100, 100, 3]).unwrap();
        let w = init_weights(&arch, 9);
        assert_eq!(w, init_weights(&arch, 9));
        assert_ne!(w, init_weights(&arch, 10));
        for (l, slot) in arch.slots().iter().enumerate() {
            let limit = 2.0 / (slot.fan_in as f64).sqrt();
            assert!(w.weights(l).iter().all(|v| v.abs() <= limit));
            assert!(w.bias(l).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_std_matches_truncated_normal() {
        // Std of N(0,1) truncated to [-2, 2]:
        // sqrt(1 - 2*2*phi(2) / (Phi(2) - Phi(-2))) = 0.879626...
        let arch = FcnArchitecture::new(vec![25, 400, 250, 2]).unwrap();
        let w = init_weights(&arch, 1);
        let layer = w.weights(1);
        assert!(layer.len() >= 100_000);
        let n = layer.len() as f64;
        let mean = layer.sum() / n;
        let std = (layer.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expected = 0.879_626 / (400.0_f64).sqrt();
        assert!((std / expected - 1.0).abs() < 0.05, "std {std} vs {expected}");
    }
}
