//! Per-tensor magnitude pruning over dense/conv weights, masks and sparsity.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{Model, Params};
use crate::tensor::Tensor;

/// Binary keep-pattern for every maskable weight tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    masks: BTreeMap<String, Tensor>,
}

impl PruneMask {
    pub fn all_ones(model: &Model) -> Self {
        let masks = model
            .maskable()
            .into_iter()
            .map(|name| {
                let shape = model.params().get(&name).expect("maskable weight").shape().to_vec();
                (name, Tensor::filled(&shape, 1.0))
            })
            .collect();
        PruneMask { masks }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.masks.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.masks.iter()
    }

    /// Fraction of kept (1) entries.
    pub fn density(&self) -> f64 {
        let (kept, total) = self.masks.values().fold((0usize, 0usize), |(k, t), m| {
            (k + m.data().iter().filter(|&&v| v != 0.0).count(), t + m.len())
        });
        if total == 0 {
            1.0
        } else {
            kept as f64 / total as f64
        }
    }

    /// The mask as named 0/1 tensors, for the checkpoint container.
    pub fn to_params(&self) -> Params {
        self.masks.iter().map(|(n, t)| (n.clone(), t.clone())).collect()
    }

    /// Reads a mask back from named tensors, checking it against `model`.
    pub fn from_params(model: &Model, params: Params) -> Result<Self> {
        let mask = PruneMask {
            masks: params.into_iter().collect(),
        };
        mask.check(model)?;
        if let Some((name, _)) = mask
            .masks
            .iter()
            .find(|(_, t)| t.data().iter().any(|&v| v != 0.0 && v != 1.0))
        {
            return Err(Error::Config(format!("mask {name} has values other than 0/1")));
        }
        Ok(mask)
    }

    fn check(&self, model: &Model) -> Result<()> {
        let maskable = model.maskable();
        if maskable.len() != self.masks.len() {
            return Err(Error::Config(format!(
                "mask covers {} tensors, model has {} maskable weights",
                self.masks.len(),
                maskable.len()
            )));
        }
        for name in maskable {
            let w = model.params().get(&name).expect("maskable weight");
            match self.masks.get(&name) {
                Some(m) if m.same_shape(w) => {}
                Some(m) => {
                    return Err(Error::Config(format!(
                        "mask {name} has shape {:?}, weight has {:?}",
                        m.shape(),
                        w.shape()
                    )))
                }
                None => return Err(Error::Config(format!("mask is missing {name}"))),
            }
        }
        Ok(())
    }
}

/// The `p`-quantile of `|weights|`, linearly interpolated between order
/// statistics at position `p * (len - 1)`.
pub fn magnitude_threshold(weights: &[f64], p: f64) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Input("cannot take a percentile of an empty tensor".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Input(format!("percentile fraction {p} outside [0, 1]")));
    }
    let mut abs: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    let pos = p * (abs.len() - 1) as f64;
    let lo = (pos.floor() as usize).min(abs.len() - 1);
    let frac = pos - lo as f64;
    let (_, &mut low, above) = abs.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || above.is_empty() {
        return Ok(low);
    }
    let high = above.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(low + frac * (high - low))
}

/// Zeroes, tensor by tensor, every maskable weight whose magnitude is not
/// strictly above that tensor's `p`-quantile. Biases are never touched.
/// `p == 0` leaves the model as is and returns an all-ones mask.
pub fn prune_weights(model: &mut Model, p: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("prune fraction {p} outside [0, 1)")));
    }
    let mut mask = PruneMask::all_ones(model);
    if p == 0.0 {
        return Ok(mask);
    }
    for (name, m) in mask.masks.iter_mut() {
        let w = model.params_mut().get_mut(name).expect("maskable weight");
        let thr = magnitude_threshold(w.data(), p)?;
        for (wi, mi) in w.data_mut().iter_mut().zip(m.data_mut()) {
            if wi.abs() > thr {
                *mi = 1.0;
            } else {
                *mi = 0.0;
                *wi = 0.0;
            }
        }
    }
    Ok(mask)
}

/// Element-wise product of each maskable weight with its mask.
pub fn apply_mask(model: &mut Model, mask: &PruneMask) -> Result<()> {
    mask.check(model)?;
    apply_mask_to_params(model.params_mut(), mask);
    Ok(())
}

/// [`apply_mask`] on bare parameters whose layout is already known to match.
pub(crate) fn apply_mask_to_params(params: &mut Params, mask: &PruneMask) {
    for (name, m) in &mask.masks {
        let w = params.get_mut(name).expect("checked mask layout");
        for (wi, mi) in w.data_mut().iter_mut().zip(m.data()) {
            *wi *= mi;
        }
    }
}

/// Zero fractions of the maskable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub per_tensor: BTreeMap<String, f64>,
    pub overall: f64,
    pub zeros: usize,
    pub total: usize,
}

impl SparsityReport {
    /// Nonzero fraction over all maskable weights.
    pub fn density(&self) -> f64 {
        1.0 - self.overall
    }
}

pub fn sparsity(model: &Model) -> SparsityReport {
    sparsity_of(model.params(), &model.maskable())
}

pub(crate) fn sparsity_of(params: &Params, maskable: &[String]) -> SparsityReport {
    let mut per_tensor = BTreeMap::new();
    let (mut zeros, mut total) = (0usize, 0usize);
    for name in maskable {
        let w = params.get(name).expect("maskable weight");
        let z = w.data().iter().filter(|&&v| v == 0.0).count();
        per_tensor.insert(name.clone(), z as f64 / w.len() as f64);
        zeros += z;
        total += w.len();
    }
    let overall = if total == 0 { 0.0 } else { zeros as f64 / total as f64 };
    SparsityReport {
        per_tensor,
        overall,
        zeros,
        total,
    }
}
