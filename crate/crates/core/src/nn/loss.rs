use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{RealTensor, Tensor};

/// Max-subtracted softmax of one logit row.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Negative log-likelihood of `label` under the softmax of `logits`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(invalid(format!("label {label} outside {} classes", logits.len())));
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    Ok(lse - logits[label])
}

/// Mean cross entropy over a batch of `(B, K, 1, 1)` logits, with its
/// gradient with respect to the logits.
pub fn cross_entropy_batch<T: Scalar>(logits: &RealTensor<T>, labels: &[usize]) -> Result<(T, RealTensor<T>)> {
    let s = logits.shape();
    let k = s.channels * s.height * s.width;
    if labels.len() != s.batch {
        return Err(shape_err(format!("{} labels for a batch of {}", labels.len(), s.batch)));
    }
    let v = logits.to_vec();
    let inv_b = T::one() / T::of(s.batch as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(v.len());
    for (row, &label) in v.chunks_exact(k).zip(labels) {
        total = total + cross_entropy(row, label)?;
        for (j, p) in softmax(row).into_iter().enumerate() {
            let target = if j == label { T::one() } else { T::zero() };
            grad.push((p - target) * inv_b);
        }
    }
    Ok((total * inv_b, Tensor::from_parts(s, grad)))
}
