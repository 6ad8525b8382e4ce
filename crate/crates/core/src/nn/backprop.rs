use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::loss::{bounded_xent, cross_entropy, LossKind, LossSpec};
use super::{FcnArchitecture, WeightSet, NUM_LAYERS};
use crate::{Error, Result};

/// Multiplicative masks applied to the input of each weight layer.
///
/// Entry 0 masks the raw features, entries 1 and 2 the hidden activations.
/// Kept units are scaled by `1 / (1 - rate)` so evaluation needs no rescaling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropoutMasks {
    pub layer_inputs: [Option<Array2<f64>>; NUM_LAYERS],
}

impl DropoutMasks {
    pub fn sample<R: rand::Rng + ?Sized>(
        arch: &FcnArchitecture,
        batch: usize,
        rate: f64,
        mask_inputs: bool,
        rng: &mut R,
    ) -> Self {
        let mut masks = DropoutMasks::default();
        if rate <= 0.0 {
            return masks;
        }
        let keep_scale = 1.0 / (1.0 - rate);
        for (l, slot) in masks.layer_inputs.iter_mut().enumerate() {
            if l == 0 && !mask_inputs {
                continue;
            }
            let width = arch.layer_sizes()[l];
            *slot = Some(Array2::from_shape_simple_fn((batch, width), || {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            }));
        }
        masks
    }
}

/// Intermediate values of a forward pass needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each weight layer, after dropout.
    pub layer_inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pub hidden_pre: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

fn check_input(arch: &FcnArchitecture, cols: usize) -> Result<()> {
    if cols != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            actual: cols,
        });
    }
    Ok(())
}

pub fn forward_cached(
    w: &WeightSet,
    x: ArrayView2<f64>,
    masks: Option<&DropoutMasks>,
) -> Result<ForwardCache> {
    check_input(w.arch(), x.ncols())?;
    let mask = |l: usize| masks.and_then(|m| m.layer_inputs[l].as_ref());
    let mut a = x.to_owned();
    if let Some(m) = mask(0) {
        a *= m;
    }
    let mut layer_inputs = Vec::with_capacity(NUM_LAYERS);
    let mut hidden_pre = Vec::with_capacity(NUM_LAYERS - 1);
    for l in 0..NUM_LAYERS {
        let z = a.dot(&w.weights(l)) + &w.bias(l);
        layer_inputs.push(a);
        if l + 1 == NUM_LAYERS {
            return Ok(ForwardCache {
                layer_inputs,
                hidden_pre,
                logits: z,
            });
        }
        let mut h = z.mapv(|v| v.max(0.0));
        if let Some(m) = mask(l + 1) {
            h *= m;
        }
        hidden_pre.push(z);
        a = h;
    }
    unreachable!()
}

/// Logits for a batch of rows (evaluation mode: no dropout).
pub fn forward_batch(w: &WeightSet, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(forward_cached(w, x, None)?.logits)
}

/// Logits for one feature vector.
pub fn fcn_forward(w: &WeightSet, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let row = x.insert_axis(Axis(0));
    Ok(forward_batch(w, row)?.row(0).to_owned())
}

/// Mean batch loss and its exact gradient with respect to every parameter.
pub fn backprop(
    w: &WeightSet,
    x: ArrayView2<f64>,
    y: &[usize],
    loss: &LossSpec,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, WeightSet)> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::EmptySplit("backprop batch".into()));
    }
    let cache = forward_cached(w, x, masks)?;
    let batch = x.nrows() as f64;
    let mut dz = Array2::<f64>::zeros(cache.logits.raw_dim());
    let mut total = 0.0;
    for (i, (logits, mut grad_row)) in cache
        .logits
        .rows()
        .into_iter()
        .zip(dz.rows_mut())
        .enumerate()
    {
        let (l, g) = match loss.kind {
            LossKind::BoundedCrossEntropy => bounded_xent(logits, y[i], loss.p_min),
            LossKind::CrossEntropy => cross_entropy(logits, y[i]),
            LossKind::ZeroOne => {
                return Err(Error::InvalidConfig(
                    "0-1 loss has no useful gradient".into(),
                ))
            }
        };
        total += l;
        grad_row.assign(&(g / batch));
    }

    let mut grads = WeightSet::zeros(w.arch());
    for l in (0..NUM_LAYERS).rev() {
        grads
            .weights_mut(l)
            .assign(&cache.layer_inputs[l].t().dot(&dz));
        grads.bias_mut(l).assign(&dz.sum_axis(Axis(0)));
        if l == 0 {
            break;
        }
        let mut da = dz.dot(&w.weights(l).t());
        if let Some(m) = masks.and_then(|m| m.layer_inputs[l].as_ref()) {
            da *= m;
        }
        Zip::from(&mut da)
            .and(&cache.hidden_pre[l - 1])
            .for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
        dz = da;
    }
    Ok((total / batch, grads))
}
