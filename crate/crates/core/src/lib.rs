//! Layer-wise training of feed-forward networks with local error signals.
//!
//! Every hidden weight layer is trained by its own pair of single-layer
//! sub-networks: a local linear classifier (`pred`) and a similarity-matching
//! head (`sim`). Gradients never cross layer boundaries, so each layer is
//! updated as soon as its forward pass is done. Backprop-free variants swap
//! the classifier transpose for a fixed random feedback matrix and the
//! one-hot target for a fixed random projection. Ordinary global backprop is
//! available as a baseline.
//!
//! - [`numerics`]: tensors and paired forward/backward kernels
//! - [`layers`]: layer blocks, Adam, initialization, checkpoints
//! - [`losses`]: similarity matching, local prediction, and their variants
//! - [`trainer`]: architectures, schedule, sampling, the training loop
//! - [`data`]: IDX/CIFAR loading, augmentation, synthetic data
//! - [`gradcheck`]: the finite-difference verification suite

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Mode, Rng, Scalar, Tensor};
