use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{backprop, FcnArchitecture, clip_grad_norm, DropoutMasks, LossSpec, SgdMomentum, WeightSet};
use crate::data::Dataset;
use crate::eval;
use crate::rng::keyed_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfigErm {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Dropout on hidden activations during training.
    pub dropout_rate: f64,
    /// Also drop raw input features.
    pub input_dropout: bool,
    pub loss: LossSpec,
    pub seed: u64,
    pub max_grad_norm: Option<f64>,
    /// Validation checkpoints are taken every this many epochs.
    pub checkpoint_every: usize,
}

impl Default for TrainConfigErm {
    fn default() -> Self {
        Self {
            epochs: 600,
            batch_size: 250,
            learning_rate: 1e-3,
            momentum: 0.95,
            dropout_rate: 0.01,
            input_dropout: false,
            loss: LossSpec::default(),
            seed: 0,
            max_grad_norm: None,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfigErm {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and checkpoint_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean training loss of each epoch (dropout active).
    pub epoch_losses: Vec<f64>,
    /// `(epoch, validation 0-1 error)` at every checkpoint.
    pub checkpoints: Vec<(usize, f64)>,
    /// Epoch whose weights were returned.
    pub selected_epoch: usize,
}

pub(crate) fn check_data(w: &WeightSet, data: &Dataset) -> Result<()> {
    check_data_dims(w.arch(), data)
}

pub(crate) fn check_data_dims(arch: &FcnArchitecture, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptySplit("training data".into()));
    }
    if data.dim() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            actual: data.dim(),
        });
    }
    if data.class_count > arch.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "{} classes in data but the network has {} outputs",
            data.class_count,
            arch.num_classes()
        )));
    }
    Ok(())
}

/// Epoch order: a fresh permutation per epoch, the last partial batch kept.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, &[epoch as u64]));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Mini-batch SGD with momentum and dropout; returns the final weights.
pub fn erm_train(data: &Dataset, cfg: &TrainConfigErm, init: WeightSet) -> Result<WeightSet> {
    Ok(erm_train_traced(data, None, cfg, init)?.0)
}

/// As [`erm_train`], optionally returning the checkpoint with the lowest 0-1
/// error on `validation` (the later checkpoint wins ties).
pub fn erm_train_traced(
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfigErm,
    init: WeightSet,
) -> Result<(WeightSet, TrainTrace)> {
    cfg.validate()?;
    check_data(&init, data)?;
    cfg.loss.validate(init.arch().num_classes())?;
    let arch = init.arch().clone();
    let mut w = init;
    let mut opt = SgdMomentum::new(arch.num_params(), cfg.learning_rate, cfg.momentum);
    let mut trace = TrainTrace::default();
    let validation = validation.filter(|v| !v.is_empty());
    let mut best: Option<(f64, WeightSet)> = None;

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for (b, idx) in epoch_batches(data.len(), cfg.batch_size, cfg.seed, epoch)
            .iter()
            .enumerate()
        {
            let x = data.features.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let masks = DropoutMasks::sample(
                &arch,
                idx.len(),
                cfg.dropout_rate,
                cfg.input_dropout,
                &mut keyed_rng(cfg.seed, &[epoch as u64, b as u64, 1]),
            );
            let (loss, mut grads) = backprop(&w, x.view(), &y, &cfg.loss, Some(&masks))?;
            if let Some(max_norm) = cfg.max_grad_norm {
                clip_grad_norm(grads.params_mut(), max_norm);
            }
            opt.step(w.params_mut(), grads.params());
            loss_sum += loss * idx.len() as f64;
        }
        trace.epoch_losses.push(loss_sum / data.len() as f64);
        if !w.is_finite() {
            return Err(Error::Numerical(format!("non-finite weights after epoch {epoch}")));
        }
        let done = epoch + 1;
        if let Some(val) = validation {
            if done % cfg.checkpoint_every == 0 || done == cfg.epochs {
                let err = eval::error_rate(&w, val);
                trace.checkpoints.push((done, err));
                if best.as_ref().map_or(true, |(e, _)| err <= *e) {
                    best = Some((err, w.clone()));
                    trace.selected_epoch = done;
                }
            }
        }
    }
    match best {
        Some((_, chosen)) => Ok((chosen, trace)),
        None => {
            trace.selected_epoch = cfg.epochs;
            Ok((w, trace))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::GaussianBlobs;
    use crate::nn::{init_weights, FcnArchitecture};

    fn blobs_setup() -> (Dataset, WeightSet) {
        let data = GaussianBlobs::separable().sample(200, 4);
        let arch = FcnArchitecture::standard(2, 2).unwrap();
        (data, init_weights(&arch, 4))
    }

    #[test]
    fn zero_epochs_returns_init() {
        let (data, init) = blobs_setup();
        let cfg = TrainConfigErm {
            epochs: 0,
            ..Default::default()
        };
        assert_eq!(erm_train(&data, &cfg, init.clone()).unwrap(), init);
    }

    #[test]
    fn training_is_deterministic() {
        let (data, init) = blobs_setup();
        let cfg = TrainConfigErm {
            epochs: 3,
            batch_size: 32,
            ..Default::default()
        };
        let a = erm_train(&data, &cfg, init.clone()).unwrap();
        let b = erm_train(&data, &cfg, init).unwrap();
        assert!(a
            .params()
            .iter()
            .zip(b.params())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn loss_decreases_over_first_epochs() {
        let data = GaussianBlobs::separable().sample(200, 0);
        let init = init_weights(&FcnArchitecture::standard(2, 2).unwrap(), 0);
        let cfg = TrainConfigErm {
            epochs: 10,
            ..Default::default()
        };
        let (_, trace) = erm_train_traced(&data, None, &cfg, init).unwrap();
        for pair in trace.epoch_losses.windows(2) {
            assert!(pair[1] <= pair[0], "{:?}", trace.epoch_losses);
        }
    }

    #[test]
    fn checkpoint_selection_tracks_validation() {
        let (data, init) = blobs_setup();
        let val = GaussianBlobs::separable().sample(40, 99);
        let cfg = TrainConfigErm {
            epochs: 30,
            ..Default::default()
        };
        let (_, trace) = erm_train_traced(&data, Some(&val), &cfg, init).unwrap();
        assert_eq!(
            trace.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(),
            vec![10, 20, 30]
        );
        let best = trace
            .checkpoints
            .iter()
            .map(|c| c.1)
            .fold(f64::INFINITY, f64::min);
        let chosen = trace
            .checkpoints
            .iter()
            .find(|c| c.0 == trace.selected_epoch)
            .unwrap();
        assert_eq!(chosen.1, best);
    }

    #[test]
    fn rejects_bad_config_and_data() {
        let (data, init) = blobs_setup();
        let cfg = TrainConfigErm {
            momentum: 1.0,
            ..Default::default()
        };
        assert!(erm_train(&data, &cfg, init.clone()).is_err());
        let empty = data.subset(&[]);
        assert!(erm_train(&empty, &TrainConfigErm::default(), init).is_err());
    }
}
