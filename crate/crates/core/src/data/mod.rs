//! Datasets: IDX and CIFAR binary loaders, per-channel standardization,
//! training-time augmentation and synthetic fixtures.

pub mod augment;
pub mod cifar;
pub mod idx;
pub mod synthetic;

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use augment::{augment_batch, cutout, hflip, jitter, AugmentConfig};
pub use cifar::{load_cifar10, load_cifar100};
pub use idx::{load_idx, load_mnist};
pub use synthetic::synthetic_blobs;

/// Guard for channels with (near) zero spread.
pub const STD_GUARD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Images `n×c×h×w` and their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        images.expect_rank(4, "dataset images")?;
        if images.batch() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {} out of range for {} classes", l, classes)));
        }
        Ok(Dataset { images, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example shape `[c, h, w]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Images and labels of the examples at `idx`.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        (self.images.select_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        Dataset { images, labels, classes: self.classes, split: self.split }
    }
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn of(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data("cannot compute statistics of an empty dataset".into()));
        }
        let c = data.image_shape()[0];
        let plane = data.images.row_len() / c;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for img in data.images.data().chunks_exact(c * plane) {
            for (ch, px) in img.chunks_exact(plane).enumerate() {
                for &v in px {
                    sum[ch] += f64::from(v);
                    sq[ch] += f64::from(v) * f64::from(v);
                }
            }
        }
        let count = (data.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| (q / count - m * m).max(0.0).sqrt()).collect();
        Ok(ChannelStats { mean, std })
    }

    /// `(x − mean) / max(std, guard)` per channel, in place.
    pub fn apply(&self, data: &mut Dataset) -> Result<()> {
        let c = data.image_shape()[0];
        if c != self.mean.len() {
            return Err(Error::Data(format!("statistics for {} channels applied to {}", self.mean.len(), c)));
        }
        let plane = data.images.row_len() / c;
        for img in data.images.data_mut().chunks_exact_mut(c * plane) {
            for (ch, px) in img.chunks_exact_mut(plane).enumerate() {
                let (m, s) = (self.mean[ch], self.std[ch].max(STD_GUARD));
                for v in px {
                    *v = ((f64::from(*v) - m) / s) as f32;
                }
            }
        }
        Ok(())
    }
}

/// Standardizes `train` with its own per-channel statistics and every other
/// split with the same statistics.
pub fn standardize(train: &mut Dataset, others: &mut [&mut Dataset]) -> Result<ChannelStats> {
    let stats = ChannelStats::of(train)?;
    stats.apply(train)?;
    for d in others.iter_mut() {
        stats.apply(d)?;
    }
    Ok(stats)
}
