use crate::error::{Error, Result};
use crate::nnkit::Tensor;
use crate::scalar::Scalar;

/// Latent channels per frame.
pub const LATENT_CHANNELS: usize = 64;
/// Audio samples per latent frame.
pub const HOP: usize = 4096;
/// Toy sample rate in Hz.
pub const SAMPLE_RATE: u32 = 4096;

/// `frames × 64` latent codes, every value strictly inside `(−1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence<T> {
    values: Tensor<T>,
}

/// Largest representable value below one.
pub fn below_one<T: Scalar>() -> T {
    T::one() - T::epsilon() / T::lit(2.0)
}

impl<T: Scalar> LatentSequence<T> {
    /// Wraps a `[frames, 64]` tensor, rejecting values outside `(−1, 1)`.
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.rank() != 2 || values.dim(1) != LATENT_CHANNELS {
            return Err(Error::shape("latent", values.shape(), &[0, LATENT_CHANNELS]));
        }
        if let Some(v) = values.data().iter().find(|v| !(v.abs() < T::one())) {
            return Err(Error::InvalidArgument(format!("latent value {v} outside (-1, 1)")));
        }
        Ok(Self { values })
    }

    /// Wraps a `[frames, 64]` tensor, clamping into `(−1, 1)`; non-finite
    /// values become 0.
    pub fn clamped(values: Tensor<T>) -> Result<Self> {
        let lim = below_one::<T>();
        let v = values.map(|x| if x.is_finite() { x.max(-lim).min(lim) } else { T::zero() });
        Self::new(v)
    }

    pub fn zeros(frames: usize) -> Self {
        Self {
            values: Tensor::zeros(vec![frames, LATENT_CHANNELS]),
        }
    }

    pub fn frames(&self) -> usize {
        self.values.dim(0)
    }

    pub fn channels(&self) -> usize {
        LATENT_CHANNELS
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }

    pub fn cast<U: Scalar>(&self) -> LatentSequence<U> {
        LatentSequence::clamped(self.values.cast()).expect("shape preserved")
    }
}
