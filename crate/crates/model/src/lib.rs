//! Multi-resolution mask network for three-stem soundtrack separation.
//!
//! The mixture is analyzed at several STFT window lengths sharing one hop.
//! Each resolution has its own encoder; encoded features are averaged,
//! passed through parallel bidirectional LSTM stacks (averaged again), and
//! decoded per resolution into nonnegative masks for every source. A source
//! estimate is the sum over resolutions of the inverse STFTs of its masked
//! mixture spectrograms.

pub mod config;
pub mod error;
pub mod model;
pub mod recon;
pub mod toy;
pub mod train;

pub use config::MrxConfig;
pub use error::{ModelError, Result};
pub use model::{Forward, MrxModel};
pub use train::{chunk_examples, EpochRecord, Example, History, TrainConfig, Trainer};
