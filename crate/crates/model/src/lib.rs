//! Dual-stream flow-matching video model: codec, conditioning, network,
//! training loop, checkpoints and sampler.

pub mod checkpoint;
pub mod codec;
pub mod condition;
pub mod config;
pub mod net;
pub mod params;
pub mod sampler;
pub mod train;

pub use codec::{Codec, LatentGrid, LatentKind};
pub use config::{ModelConfig, Trainable};
pub use net::{Batch, DualStreamNet, ForwardOptions, ItemInputs, StreamInputs};
