//! Latent-diffusion accompaniment engine at desk scale: a small autodiff
//! library, synthetic multi-track data, a consistency codec, a conditioned
//! latent denoiser with guided sampling, evaluation metrics and the
//! experiment harness.

pub mod codec;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nnkit;
pub mod rngs;
pub mod scalar;
pub mod synthdata;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

/// Single- and double-precision instantiations of the generic types.
pub type Tensor32 = nnkit::Tensor<f32>;
pub type Tensor64 = nnkit::Tensor<f64>;
pub type CodecModel32 = codec::CodecModel<f32>;
pub type CodecModel64 = codec::CodecModel<f64>;
pub type DenoiserModel32 = diffusion::DenoiserModel<f32>;
pub type DenoiserModel64 = diffusion::DenoiserModel<f64>;
