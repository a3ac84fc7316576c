//! A tiny denoiser and batch for tests that need a real network.

use accomp_core::diffusion::{DenoiserConfig, DenoiserModel, TrainBatch};
use accomp_core::nnkit::Tensor;
use accomp_core::rngs::normal;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> DenoiserConfig {
    DenoiserConfig {
        channels: 4,
        width: 8,
        style_dim: 4,
        noise_dim: 8,
        emb_dim: 8,
        groups: 2,
        sigma_data: 0.5,
    }
}

pub fn tiny_model(seed: u64) -> DenoiserModel<f64> {
    DenoiserModel::new(tiny_config(), &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn tiny_batch(batch: usize, frames: usize, seed: u64) -> TrainBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrainBatch {
        target: Tensor::from_fn(vec![batch, frames, 4], |_| 0.5 * normal::<f64, _>(&mut rng)),
        context: Tensor::from_fn(vec![batch, frames, 4], |_| normal::<f64, _>(&mut rng)),
        style: Tensor::from_fn(vec![batch, 4], |_| normal::<f64, _>(&mut rng)),
    }
}

/// Dropout counts after `steps` real optimizer steps on a fixed batch.
pub fn dropout_over_steps(steps: u64, batch: usize, seed: u64) -> accomp_core::diffusion::DropoutStats {
    use accomp_core::diffusion::{LdmTrainConfig, LdmTrainer};
    let mut model = tiny_model(seed);
    let data = tiny_batch(batch, 4, seed + 1);
    let mut trainer = LdmTrainer::new(&model, LdmTrainConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    for _ in 0..steps {
        trainer.step(&mut model, &data, &mut rng).unwrap();
    }
    assert_eq!(trainer.steps, steps);
    trainer.dropout
}

/// Fixed inputs for guidance comparisons on [`tiny_model`].
pub struct GuidanceInputs {
    pub x: Tensor<f64>,
    pub context: Tensor<f64>,
    pub style: Tensor<f64>,
}

pub fn guidance_inputs(seed: u64) -> GuidanceInputs {
    let b = tiny_batch(3, 6, seed);
    GuidanceInputs {
        x: b.target,
        context: b.context,
        style: b.style,
    }
}
