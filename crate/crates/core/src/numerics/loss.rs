use crate::error::{dim_err, Error, Result};
use crate::numerics::tensor::{Scalar, Tensor};

/// Row-wise softmax of an `n×C` logit matrix, computed stably.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_rank(2, "softmax")?;
    let c = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Mean cross-entropy between softmax(logits) and class indices, with
/// gradient `(softmax − onehot)/n`.
pub fn cross_entropy_labels<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    logits.expect_rank(2, "cross_entropy")?;
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(dim_err!("{} labels for {} logit rows", labels.len(), n));
    }
    let mut grad = logits.clone();
    let mut total = 0.0f64;
    let inv_n = T::one() / T::of(n as f64);
    for (row, &y) in grad.data_mut().chunks_mut(c).zip(labels) {
        if y >= c {
            return Err(Error::Input(format!("label {} out of range for {} classes", y, c)));
        }
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += (lse - row[y]).as_f64();
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_n;
        }
        row[y] -= inv_n;
    }
    Ok((total / n as f64, grad))
}

/// Class index of every one-hot row; errors on rows that are not one-hot.
pub fn onehot_to_labels<T: Scalar>(targets: &Tensor<T>) -> Result<Vec<usize>> {
    targets.expect_rank(2, "one-hot targets")?;
    let c = targets.shape()[1];
    targets
        .data()
        .chunks(c)
        .enumerate()
        .map(|(i, row)| {
            let ones: Vec<usize> = (0..c).filter(|&j| row[j] == T::one()).collect();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones.len() == 1 && zeros == c - 1 {
                Ok(ones[0])
            } else {
                Err(Error::Input(format!("target row {} is not one-hot", i)))
            }
        })
        .collect()
}

/// Mean cross-entropy against one-hot targets `n×C`.
pub fn cross_entropy_logits<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    logits.check_same_shape(targets)?;
    let labels = onehot_to_labels(targets)?;
    cross_entropy_labels(logits, &labels)
}

/// One-hot `n×classes` matrix for the given labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        t.data_mut()[i * classes + y] = T::one();
    }
    t
}

/// Row-wise argmax.
pub fn argmax_rows<T: Scalar>(x: &Tensor<T>) -> Vec<usize> {
    let c = x.row_len();
    x.data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
