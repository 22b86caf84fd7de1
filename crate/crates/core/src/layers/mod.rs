//! Layer blocks, their initialization and optimizer state, and the
//! checkpoint file format.

pub mod adam;
mod block;
pub mod checkpoint;
mod output;
mod tracker;

pub use adam::{adam_step, AdamState};
pub use block::{
    BlockBackward, BlockCache, BlockGrads, BlockKind, BlockSpec, LayerBlock, LocalLosses, Param, PredHead,
};
pub use checkpoint::Checkpoint;
pub use output::{OutputGrads, OutputLayer};
pub use tracker::{CacheTracker, LiveToken};
