//! Architecture parsing, the layer-wise training loop, learning-rate
//! schedule, batch sampling and evaluation.

pub mod arch;
mod network;
pub mod sampler;
pub mod schedule;
mod train;

pub use arch::{expand_preset, parse_arch, BlockSettings, LayerToken, NetworkSpec};
pub use network::{Network, NetworkGrads, StepReport, INIT_STREAM};
pub use sampler::sample_batches;
pub use schedule::LrSchedule;
pub use train::{epoch_batches, train, EpochRecord, EpochStreams, History, TrainConfig, DEFAULT_BATCH};
