use log::warn;

use crate::error::{Error, Result};
use crate::losses::LabelBatch;
use crate::numerics::linalg::{add_row_bias, column_sums, matmul, matmul_t, Trans};
use crate::numerics::{avgpool, avgpool_backward, cross_entropy_labels, Scalar, Tensor};

/// Average-pooling kernel for the pred head of a conv layer with `channels`
/// maps of side `spatial`: the largest `k` dividing `spatial` that keeps
/// `channels·(spatial/k)² ≥ target_dim`. Falls back to global pooling (with
/// a warning) when even `k = 1` is too small.
pub fn choose_pool_kernel(channels: usize, spatial: usize, target_dim: usize) -> usize {
    let dim = |k: usize| channels * (spatial / k) * (spatial / k);
    let divisors: Vec<usize> = (1..=spatial.max(1)).filter(|k| spatial % k == 0).collect();
    if let Some(&k) = divisors.iter().find(|&&k| dim(k) == target_dim) {
        return k;
    }
    match divisors.iter().rev().find(|&&k| dim(k) >= target_dim) {
        Some(&k) => k,
        None => {
            warn!(
                "pred head: {} channels at {}×{} cannot reach {} features; using global pooling",
                channels, spatial, spatial, target_dim
            );
            spatial.max(1)
        }
    }
}

/// Pooled, flattened input to a local classifier.
pub fn pred_features<T: Scalar>(h: &Tensor<T>, pool: usize) -> Result<Tensor<T>> {
    match h.rank() {
        4 => Ok(avgpool(h, pool)?.flatten_batch()),
        2 if pool == 1 => Ok(h.clone()),
        _ => Err(Error::Config(format!("cannot pool activations of shape {:?} with kernel {}", h.shape(), pool))),
    }
}

/// Routes a gradient at the classifier input back to the activations.
pub fn pred_features_backward<T: Scalar>(grad: Tensor<T>, h_shape: &[usize], pool: usize) -> Result<Tensor<T>> {
    if h_shape.len() == 4 {
        let pooled = [h_shape[0], h_shape[1], h_shape[2] / pool, h_shape[3] / pool];
        avgpool_backward(&grad.reshape(&pooled)?, pool, h_shape)
    } else {
        grad.reshape(h_shape)
    }
}

#[derive(Debug)]
pub struct PredLossOutput<T> {
    pub loss: f64,
    pub grad_h: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

pub(crate) fn classifier_logits<T: Scalar>(feat: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if feat.shape()[1] != w.shape()[0] {
        return Err(Error::Config(format!(
            "local classifier expects {} inputs, pooled activations have {}",
            w.shape()[0],
            feat.shape()[1]
        )));
    }
    let mut z = matmul(feat, w)?;
    add_row_bias(&mut z, b)?;
    Ok(z)
}

/// Cross-entropy of a local linear classifier `W`, `b` applied to the pooled
/// activations.
pub fn pred_loss<T: Scalar>(
    h: &Tensor<T>,
    labels: &LabelBatch,
    w: &Tensor<T>,
    b: &Tensor<T>,
    pool: usize,
) -> Result<PredLossOutput<T>> {
    let feat = pred_features(h, pool)?;
    let z = classifier_logits(&feat, w, b)?;
    let (loss, dz) = cross_entropy_labels(&z, labels.labels())?;
    let grad_w = matmul_t(&feat, Trans::Yes, &dz, Trans::No)?;
    let grad_b = column_sums(&dz)?;
    let dfeat = matmul_t(&dz, Trans::No, w, Trans::Yes)?;
    let grad_h = pred_features_backward(dfeat, h.shape(), pool)?;
    Ok(PredLossOutput { loss, grad_h, grad_w, grad_b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_kernel_rule() {
        assert_eq!(choose_pool_kernel(128, 16, 2048), 4);
        assert_eq!(choose_pool_kernel(1024, 1, 1024), 1);
        assert_eq!(choose_pool_kernel(512, 8, 1024), 4);
        assert_eq!(choose_pool_kernel(4, 2, 1024), 2);
    }

    #[test]
    fn zero_classifier_gives_ln_c() {
        let mut rng = crate::Rng::new(4);
        let h = Tensor::<f64>::from_fn(&[5, 2, 4, 4], |_| rng.normal());
        let w = Tensor::<f64>::zeros(&[2 * 2 * 2, 10]);
        let b = Tensor::<f64>::zeros(&[10]);
        let y = LabelBatch::new(vec![0, 3, 9, 1, 1], 10).unwrap();
        let out = pred_loss(&h, &y, &w, &b, 2).unwrap();
        assert!((out.loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn mismatched_pool_is_config_error() {
        let h = Tensor::<f64>::zeros(&[2, 2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[3, 10]);
        let b = Tensor::<f64>::zeros(&[10]);
        let y = LabelBatch::new(vec![0, 1], 10).unwrap();
        assert!(matches!(pred_loss(&h, &y, &w, &b, 2), Err(Error::Config(_))));
    }
}
