use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Row-wise softmax of an `N×classes` matrix, max-subtracted.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, k] = logits.dims2()?;
    let mut out = Vec::with_capacity(n * k);
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    Tensor::new(vec![n, k], out)
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy_loss<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let [n, k] = logits.dims2()?;
    if n == 0 || labels.is_empty() {
        return Err(invalid!("empty batch"));
    }
    if labels.len() != n {
        return Err(invalid!("{} labels for {n} rows", labels.len()));
    }
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        if label >= k {
            return Err(invalid!("label {label} out of range for {k} classes"));
        }
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        total = total + (lse - row[label]);
    }
    Ok(total / T::of_f64(n as f64))
}
