use ndarray::Array2;

use super::Real;

/// Row-wise softmax, computed in a max-shifted form.
pub fn softmax_rows<F: Real>(logits: &Array2<F>) -> Array2<F> {
    let mut p = logits.clone();
    for mut row in p.outer_iter_mut() {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: F = row.iter().copied().sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<F: Real>(logits: &Array2<F>, targets: &[usize]) -> (f64, Array2<F>) {
    assert_eq!(logits.nrows(), targets.len());
    let n = targets.len().max(1);
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    let inv_n = F::from_f64_lossy(1.0 / n as f64);
    for (mut row, &t) in grad.outer_iter_mut().zip(targets) {
        loss -= row[t].as_f64().max(f64::MIN_POSITIVE).ln();
        row[t] -= F::one();
        row.mapv_inplace(|v| v * inv_n);
    }
    (loss / n as f64, grad)
}
