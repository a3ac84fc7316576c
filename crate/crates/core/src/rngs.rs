//! Deterministic RNG streams.
//!
//! Every random consumer derives its generator from a `(seed, stream)` pair,
//! so results never depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nnkit::Tensor;
use crate::scalar::Scalar;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal<T: Scalar, R: rand::Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

pub fn normal_tensor<T: Scalar, R: rand::Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| normal(rng))
}
