use super::model::{Cache, Model};
use super::params::Params;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax, computed with the max subtracted.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = logits.row_len();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Mean softmax cross-entropy and the gradient with respect to the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let b = logits.rows();
    let c = logits.row_len();
    if logits.shape().len() != 2 || b != labels.len() {
        return Err(Error::Input(format!(
            "logits shape {:?} does not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Input(format!("label {bad} outside [0, {c})")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b * c);
    for (row, &label) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (k, v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            grad.push((p - if k == label { 1.0 } else { 0.0 }) / b as f64);
        }
    }
    Ok((loss / b as f64, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Cross-entropy loss of a forward pass and the exact parameter gradients
/// for the dropout/noise draws recorded in `cache`.
pub fn loss_and_backward(
    model: &Model,
    logits: &Tensor,
    labels: &[usize],
    cache: &Cache,
) -> Result<(f64, Params)> {
    let (loss, dlogits) = softmax_xent(logits, labels)?;
    let grads = model.backward(cache, dlogits)?;
    Ok((loss, grads))
}
