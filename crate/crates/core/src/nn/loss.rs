use ndarray::{Array2, Axis};

use super::Real;

pub fn log_softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Index of the largest entry per row; ties resolve to the lowest index.
pub fn argmax_rows<T: Real>(values: &Array2<T>) -> Vec<usize> {
    values
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Mean categorical cross-entropy over one-hot targets and its gradient with
/// respect to the logits, `(softmax - onehot) / batch`.
pub fn cross_entropy_with_grad<T: Real>(logits: &Array2<T>, targets: &[usize]) -> (T, Array2<T>) {
    let n = logits.nrows();
    assert_eq!(n, targets.len(), "one target per row");
    let logp = log_softmax_rows(logits);
    let batch = T::from_usize(n).expect("batch size");
    let mut loss = T::zero();
    for (row, &t) in logp.axis_iter(Axis(0)).zip(targets) {
        loss = loss - row[t];
    }
    let mut grad = logp.mapv(|v| v.exp());
    for (mut row, &t) in grad.axis_iter_mut(Axis(0)).zip(targets) {
        row[t] = row[t] - T::one();
    }
    grad.mapv_inplace(|v| v / batch);
    (loss / batch, grad)
}
