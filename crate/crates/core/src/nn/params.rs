use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn weight_name(layer: usize) -> String {
    format!("{layer:02}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("{layer:02}.bias")
}

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params(BTreeMap<String, Tensor>);

impl Params {
    pub fn insert(&mut self, name: String, t: Tensor) -> Option<Tensor> {
        self.0.insert(name, t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub(crate) fn expect(&self, name: &str) -> &Tensor {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("model invariant: missing parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn num_values(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// Same names with the same shapes.
    pub fn same_layout(&self, other: &Params) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|((a, ta), (b, tb))| a == b && ta.same_shape(tb))
    }

    pub fn check_layout(&self, other: &Params, what: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Config(format!("{what}: parameter names or shapes differ")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }

    /// Largest absolute element-wise difference; `None` if layouts differ.
    pub fn max_abs_diff(&self, other: &Params) -> Option<f64> {
        if !self.same_layout(other) {
            return None;
        }
        Some(
            self.0
                .values()
                .zip(other.0.values())
                .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max),
        )
    }

    /// Bitwise equality of every value (distinguishes -0.0 from 0.0).
    pub fn bitwise_eq(&self, other: &Params) -> bool {
        self.same_layout(other)
            && self.0.values().zip(other.0.values()).all(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl FromIterator<(String, Tensor)> for Params {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Params(iter.into_iter().collect())
    }
}

impl IntoIterator for Params {
    type Item = (String, Tensor);
    type IntoIter = std::collections::btree_map::IntoIter<String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}
