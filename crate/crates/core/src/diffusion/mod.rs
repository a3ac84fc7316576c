//! Latent diffusion: noise ladder, guidance, samplers, denoiser network and
//! its training step.

pub mod guidance;
pub mod interp;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use guidance::{guided_denoise, ConditioningBundle, Denoiser};
pub use interp::interpolate_style;
pub use model::{DenoiserConfig, DenoiserModel, ForwardInputs};
pub use sampler::{
    ancestral_split, masked_sample, pseudo_stereo_sample, reverse_step, sample, Integrator, MaskMode, MaskSpec,
    SamplerConfig,
};
pub use schedule::{build_schedule, default_schedule, NoiseSchedule};
pub use train::{draw_step, edm_loss, training_loss, DropoutStats, LdmTrainConfig, LdmTrainer, StepDraw, TrainBatch};
