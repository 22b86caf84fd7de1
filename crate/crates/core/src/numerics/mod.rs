//! Dense tensors and the hand-paired forward/backward kernels used by the
//! layers and losses. Everything here is a pure function of its arguments.

pub mod activation;
pub mod conv;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use activation::{dropout, dropout_backward, leaky_relu, leaky_relu_backward, DropoutMask};
pub use conv::{conv2d, conv2d_backward, ConvGeometry};
pub use linalg::{matmul, matmul_backward, matmul_t, Trans};
pub use loss::{cross_entropy_labels, cross_entropy_logits, one_hot, softmax};
pub use norm::{batchnorm, batchnorm_backward, BatchNormCache, RunningStats};
pub use pool::{avgpool, avgpool_backward, maxpool2x2, maxpool2x2_backward};
pub use rng::Rng;
pub use stats::{std_per_feature_map, std_per_feature_map_backward};
pub use tensor::{Scalar, Tensor};

/// Whether a forward pass is part of training (batch statistics, dropout on)
/// or evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
