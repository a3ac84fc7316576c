//! Toy consistency autoencoder: 4096-sample frames to 64-channel latents in
//! `(−1, 1)` (64× compression) and a one-pass consistency decoder.

pub mod latent;
pub mod model;
pub mod train;

pub use latent::{LatentSequence, HOP, LATENT_CHANNELS, SAMPLE_RATE};
pub use model::{audio_tensor, CodecConfig, CodecModel, CodecNet, Parameterization};
pub use train::{consistency_loss, CodecTrainer, ConsistencyTrainConfig, LevelSampling, PairDraw};
