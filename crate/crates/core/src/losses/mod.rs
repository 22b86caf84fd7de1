//! Local loss functions. Each returns a scalar loss plus the gradient at the
//! hidden activations and at any sub-network parameters it owns.

mod bpf;
mod combine;
mod pred;
mod sim;
pub mod similarity;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{one_hot, Scalar, Tensor};

pub use bpf::{bce_with_logits, pred_bpf_loss, sim_bpf_loss, TargetProjection};
pub use combine::combine;
pub use pred::{choose_pool_kernel, pred_features, pred_features_backward, pred_loss, PredLossOutput};
pub use sim::{sim_loss, SimHead, SimLossOutput};
pub use similarity::{similarity_backward, similarity_match, similarity_matrix, similarity_matrix_cached, SimilarityMatrix};

/// Size of the random target projection used by the backprop-free losses.
pub const PROJECTION_DIM: usize = 128;

/// Which objective trains the hidden layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// Global backprop of the output cross-entropy.
    Glob,
    Pred,
    Sim,
    PredSim,
    PredBpf,
    SimBpf,
    PredSimBpf,
    /// Global backprop plus every layer's sim loss, not detached.
    GlobSim,
}

impl LossMode {
    pub const ALL: [LossMode; 8] = [
        LossMode::Glob,
        LossMode::Pred,
        LossMode::Sim,
        LossMode::PredSim,
        LossMode::PredBpf,
        LossMode::SimBpf,
        LossMode::PredSimBpf,
        LossMode::GlobSim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Glob => "glob",
            LossMode::Pred => "pred",
            LossMode::Sim => "sim",
            LossMode::PredSim => "predsim",
            LossMode::PredBpf => "pred-bpf",
            LossMode::SimBpf => "sim-bpf",
            LossMode::PredSimBpf => "predsim-bpf",
            LossMode::GlobSim => "glob+sim",
        }
    }

    /// Hidden layers are detached and trained only by their own losses.
    pub fn is_local(self) -> bool {
        !matches!(self, LossMode::Glob | LossMode::GlobSim)
    }

    pub fn is_bpf(self) -> bool {
        matches!(self, LossMode::PredBpf | LossMode::SimBpf | LossMode::PredSimBpf)
    }

    pub fn has_pred(self) -> bool {
        matches!(self, LossMode::Pred | LossMode::PredSim | LossMode::PredBpf | LossMode::PredSimBpf)
    }

    pub fn has_sim(self) -> bool {
        matches!(
            self,
            LossMode::Sim | LossMode::PredSim | LossMode::SimBpf | LossMode::PredSimBpf | LossMode::GlobSim
        )
    }

    /// Whether hidden blocks own a trainable similarity head.
    pub fn has_sim_head(self) -> bool {
        self.has_sim() && !self.is_bpf()
    }

    pub fn default_beta(self) -> f64 {
        match self {
            LossMode::PredSim => 0.99,
            LossMode::PredSimBpf => 0.01,
            LossMode::Sim | LossMode::SimBpf | LossMode::GlobSim => 1.0,
            LossMode::Glob | LossMode::Pred | LossMode::PredBpf => 0.0,
        }
    }

    /// Leaky slope of the hidden nonlinearity: plain ReLU unless a
    /// similarity loss is involved.
    pub fn default_slope(self) -> f64 {
        if self.has_sim() {
            0.01
        } else {
            0.0
        }
    }

    pub fn valid_names() -> String {
        LossMode::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss mode '{}'; valid modes: {}", s, LossMode::valid_names())))
    }
}

/// Loss mode plus its weighting and target-projection settings.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Weight of the sim term: `(1−β)·pred + β·sim`. In `glob+sim` it scales
    /// every layer's sim loss added to the global objective.
    pub beta: f64,
    pub projection_dim: usize,
    /// Flattened input size the pred head's average pooling aims for.
    pub pred_target_dim: usize,
}

impl LossConfig {
    pub fn new(mode: LossMode) -> Self {
        LossConfig {
            mode,
            beta: mode.default_beta(),
            projection_dim: PROJECTION_DIM,
            pred_target_dim: 1024,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if self.projection_dim == 0 || self.pred_target_dim == 0 {
            return Err(Error::Config("projection and pred target dims must be positive".into()));
        }
        Ok(())
    }

    /// Weights of the pred and sim terms for this mode.
    pub fn weights(&self) -> (f64, f64) {
        match (self.mode.has_pred(), self.mode.has_sim()) {
            (true, true) => (1.0 - self.beta, self.beta),
            (true, false) => (1.0, 0.0),
            (false, true) => (0.0, if self.mode == LossMode::GlobSim { self.beta } else { 1.0 }),
            (false, false) => (0.0, 0.0),
        }
    }
}

/// Class labels of one mini-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelBatch {
    labels: Vec<usize>,
    classes: usize,
}

impl LabelBatch {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Input(format!("label {} out of range for {} classes", bad, classes)));
        }
        Ok(LabelBatch { labels, classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One-hot rows, `n×C`.
    pub fn one_hot<T: Scalar>(&self) -> Tensor<T> {
        one_hot(&self.labels, self.classes)
    }

    /// `S(Y)`: `1` for same-class pairs, `−1/(C−1)` otherwise.
    pub fn target_similarity<T: Scalar>(&self) -> Result<SimilarityMatrix<T>> {
        similarity_matrix(&self.one_hot::<T>())
    }
}
