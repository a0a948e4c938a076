use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled samples: `features` has shape `[N, ...sample dims]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Input("dataset has no samples".into()));
        }
        if features.shape().len() < 2 || features.rows() != labels.len() {
            return Err(Error::Input(format!(
                "features {:?} do not match {} labels",
                features.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Input(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    /// Feature rows and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Input(format!("index {bad} outside dataset of {}", self.len())));
        }
        let (features, labels) = self.batch(indices);
        Dataset::new(features, labels, self.num_classes)
    }

    /// Sample indices grouped by class, each group ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Same samples viewed with a different per-sample shape.
    pub fn reshape_samples(self, sample_shape: &[usize]) -> Result<Dataset> {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(sample_shape);
        Ok(Dataset {
            features: self.features.reshape(shape)?,
            ..self
        })
    }
}
