use crate::error::{dim_err, Result};
use crate::losses::similarity::{similarity_match, SimilarityMatrix};
use crate::numerics::conv::{conv2d, conv2d_input_grad, conv2d_kernel_grad, ConvGeometry};
use crate::numerics::linalg::{matmul, matmul_backward};
use crate::numerics::{std_per_feature_map, std_per_feature_map_backward, Scalar, Tensor};

/// The trainable sub-network in front of the similarity matrix.
#[derive(Clone, Copy, Debug)]
pub enum SimHead<'a, T> {
    /// Bias-free linear map, weight `d_in×d_out`.
    Dense(&'a Tensor<T>),
    /// Bias-free 3×3 same-padding conv, kernel `c×c×3×3`, followed by a
    /// per-feature-map standard deviation.
    Conv(&'a Tensor<T>),
}

#[derive(Debug)]
pub struct SimLossOutput<T> {
    pub loss: f64,
    pub grad_h: Tensor<T>,
    pub grad_head: Tensor<T>,
}

/// Similarity-matching loss `‖S(head(H)) − S(Y)‖²/n²`.
pub fn sim_loss<T: Scalar>(h: &Tensor<T>, target: &SimilarityMatrix<T>, head: SimHead<'_, T>) -> Result<SimLossOutput<T>> {
    match head {
        SimHead::Dense(w) => {
            let flat = h.clone().flatten_batch();
            if flat.shape()[1] != w.shape()[0] {
                return Err(dim_err!("sim head expects {} inputs, got {}", w.shape()[0], flat.shape()[1]));
            }
            let z = matmul(&flat, w)?;
            let (loss, dz) = similarity_match(&z, target)?;
            let (dh, dw) = matmul_backward(&flat, w, &dz)?;
            Ok(SimLossOutput { loss, grad_h: dh.reshape(h.shape())?, grad_head: dw })
        }
        SimHead::Conv(k) => {
            h.expect_rank(4, "conv sim head input")?;
            let z = conv2d(h, k, ConvGeometry::SAME3)?;
            let desc = std_per_feature_map(&z)?;
            let (loss, ddesc) = similarity_match(&desc, target)?;
            let dz = std_per_feature_map_backward(&z, &desc, &ddesc)?;
            let dk = conv2d_kernel_grad(h, k, ConvGeometry::SAME3, &dz)?;
            let dh = conv2d_input_grad(h.shape(), k, ConvGeometry::SAME3, &dz)?;
            Ok(SimLossOutput { loss, grad_h: dh, grad_head: dk })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LabelBatch;

    #[test]
    fn head_reproducing_labels_gives_zero() {
        let y = LabelBatch::new(vec![0, 1, 2, 1], 3).unwrap();
        let h: Tensor<f64> = y.one_hot();
        let w = Tensor::identity(3);
        let out = sim_loss(&h, &y.target_similarity().unwrap(), SimHead::Dense(&w)).unwrap();
        assert!(out.loss < 1e-24);
    }

    #[test]
    fn single_class_identical_outputs_give_zero() {
        let y = LabelBatch::new(vec![2, 2, 2], 4).unwrap();
        let h = Tensor::<f64>::from_fn(&[3, 5], |i| (i % 5) as f64);
        let w = Tensor::<f64>::from_fn(&[5, 5], |i| (i as f64 * 0.3).sin());
        let out = sim_loss(&h, &y.target_similarity().unwrap(), SimHead::Dense(&w)).unwrap();
        assert!(out.loss < 1e-20);
    }
}
