//! Backprop-free local losses: no gradient passes through any weight layer
//! on its way to the hidden activations.

use crate::error::{dim_err, Result};
use crate::losses::pred::{classifier_logits, pred_features, pred_features_backward, PredLossOutput};
use crate::losses::similarity::{similarity_match, similarity_matrix};
use crate::losses::LabelBatch;
use crate::numerics::linalg::{column_sums, matmul_t, Trans};
use crate::numerics::{std_per_feature_map, std_per_feature_map_backward, Rng, Scalar, Tensor};

/// Fixed random linear map `P` (`dim×classes`) from one-hot labels to a
/// layer-local target. Never updated after creation.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetProjection<T> {
    matrix: Tensor<T>,
}

impl<T: Scalar> TargetProjection<T> {
    /// Entries drawn from `N(0, σ²)` with `σ = 1/√dim`.
    pub fn new(dim: usize, classes: usize, rng: &mut Rng) -> Self {
        let sd = 1.0 / (dim as f64).sqrt();
        TargetProjection { matrix: Tensor::from_fn(&[dim, classes], |_| T::of(rng.normal() * sd)) }
    }

    pub fn from_matrix(matrix: Tensor<T>) -> Result<Self> {
        matrix.expect_rank(2, "target projection")?;
        Ok(TargetProjection { matrix })
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Tensor<T> {
        &mut self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[0]
    }

    /// `P·y` for every example, as rows: `n×dim`.
    pub fn project(&self, labels: &LabelBatch) -> Result<Tensor<T>> {
        let (dim, classes) = (self.matrix.shape()[0], self.matrix.shape()[1]);
        if labels.classes() != classes {
            return Err(dim_err!("projection built for {} classes, labels have {}", classes, labels.classes()));
        }
        let m = self.matrix.data();
        let mut out = Tensor::zeros(&[labels.len(), dim]);
        for (row, &y) in out.data_mut().chunks_mut(dim).zip(labels.labels()) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = m[k * classes + y];
            }
        }
        Ok(out)
    }

    /// `1[P·y > 0]`: the binary targets of the backprop-free pred loss.
    pub fn binarized(&self, labels: &LabelBatch) -> Result<Tensor<T>> {
        Ok(self.project(labels)?.map(|v| if v > T::zero() { T::one() } else { T::zero() }))
    }
}

/// Mean binary cross-entropy of `σ(logits)` against `{0,1}` targets, computed
/// in the overflow-free form `max(z,0) − z·t + ln(1 + e^{−|z|})`.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    logits.check_same_shape(targets)?;
    let count = logits.len() as f64;
    let inv = T::of(1.0 / count);
    let mut loss = 0.0;
    let mut grad = logits.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(targets.data()) {
        let z = *g;
        loss += (z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p()).as_f64();
        let sig = if z >= T::zero() {
            T::one() / (T::one() + (-z).exp())
        } else {
            let e = z.exp();
            e / (T::one() + e)
        };
        *g = (sig - t) * inv;
    }
    Ok((loss / count, grad))
}

/// Descriptor the sim-bpf loss compares: per-map standard deviations for
/// conv activations, the activation vector itself for dense ones.
fn bpf_descriptor<T: Scalar>(h: &Tensor<T>) -> Result<Tensor<T>> {
    if h.rank() == 4 {
        std_per_feature_map(h)
    } else {
        Ok(h.clone().flatten_batch())
    }
}

/// Similarity matching of the raw activation descriptors against `S(P·y)`.
/// No trainable head; the only gradient path is std → cosine.
pub fn sim_bpf_loss<T: Scalar>(h: &Tensor<T>, projected: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let target = similarity_matrix(projected)?;
    let desc = bpf_descriptor(h)?;
    let (loss, ddesc) = similarity_match(&desc, &target)?;
    let grad_h = if h.rank() == 4 {
        std_per_feature_map_backward(h, &desc, &ddesc)?
    } else {
        ddesc.reshape(h.shape())?
    };
    Ok((loss, grad_h))
}

/// Local classifier predicting the binarized target projection with a binary
/// cross-entropy. The classifier gets its true gradient; the error reaches
/// `h` through the fixed feedback matrix (same shape as `w`) instead of `wᵀ`.
pub fn pred_bpf_loss<T: Scalar>(
    h: &Tensor<T>,
    labels: &LabelBatch,
    w: &Tensor<T>,
    b: &Tensor<T>,
    feedback: &Tensor<T>,
    projection: &TargetProjection<T>,
    pool: usize,
) -> Result<PredLossOutput<T>> {
    if feedback.shape() != w.shape() {
        return Err(dim_err!("feedback matrix {:?} must match classifier {:?}", feedback.shape(), w.shape()));
    }
    let targets = projection.binarized(labels)?;
    let feat = pred_features(h, pool)?;
    let z = classifier_logits(&feat, w, b)?;
    let (loss, dz) = bce_with_logits(&z, &targets)?;
    let grad_w = matmul_t(&feat, Trans::Yes, &dz, Trans::No)?;
    let grad_b = column_sums(&dz)?;
    let dfeat = matmul_t(&dz, Trans::No, feedback, Trans::Yes)?;
    let grad_h = pred_features_backward(dfeat, h.shape(), pool)?;
    Ok(PredLossOutput { loss, grad_h, grad_w, grad_b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_label_same_projection() {
        let mut rng = Rng::new(8);
        let p = TargetProjection::<f64>::new(128, 10, &mut rng);
        let y = LabelBatch::new(vec![3, 3, 5], 10).unwrap();
        let s = similarity_matrix(&p.project(&y).unwrap()).unwrap();
        assert!((s.get(0, 1) - 1.0).abs() < 1e-12);
        let bits = p.binarized(&y).unwrap();
        assert!(bits.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn zero_classifier_gives_ln2() {
        let mut rng = Rng::new(2);
        let p = TargetProjection::<f64>::new(16, 4, &mut rng);
        let h = Tensor::<f64>::from_fn(&[3, 6], |_| rng.normal());
        let w = Tensor::<f64>::zeros(&[6, 16]);
        let fb = Tensor::<f64>::from_fn(&[6, 16], |_| rng.normal());
        let b = Tensor::<f64>::zeros(&[16]);
        let y = LabelBatch::new(vec![0, 1, 3], 4).unwrap();
        let out = pred_bpf_loss(&h, &y, &w, &b, &fb, &p, 1).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_zero() {
        let t = Tensor::<f64>::from_f64(&[1, 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let z = t.map(|v| if v > 0.5 { 60.0 } else { -60.0 });
        let (l, g) = bce_with_logits(&z, &t).unwrap();
        assert!(l < 1e-20);
        assert!(g.max_abs() < 1e-20);
        let huge = Tensor::<f32>::from_f64(&[1, 2], &[1e30, -1e30]).unwrap();
        let (l, g) = bce_with_logits(&huge, &Tensor::<f32>::from_f64(&[1, 2], &[0.0, 1.0]).unwrap()).unwrap();
        assert!(l.is_finite() && g.is_finite());
    }

    #[test]
    fn matching_descriptors_give_zero() {
        let y = LabelBatch::new(vec![0, 1, 0], 2).unwrap();
        let mut rng = Rng::new(1);
        let p = TargetProjection::<f64>::new(8, 2, &mut rng);
        let yp = p.project(&y).unwrap();
        let (l, _) = sim_bpf_loss(&yp, &yp).unwrap();
        assert!(l < 1e-24);
    }
}
