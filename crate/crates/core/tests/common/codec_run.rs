use accomp_core::codec::{CodecConfig, CodecModel, CodecTrainer, ConsistencyTrainConfig, HOP};
use accomp_core::synthdata::{generate_trackset, AudioBuffer, DatasetSpec, TrackSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct CodecRun {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub boundary_at_init: f64,
    pub boundary_after: f64,
}

/// Trains a fresh codec on one-frame clips drawn from a small synthetic
/// corpus and measures a fixed batch before and after.
pub fn train_on_clips(steps: usize, seed: u64) -> CodecRun {
    let spec = DatasetSpec {
        n_tracksets: 16,
        track_len: 16.0,
        ..Default::default()
    };
    let sets: Vec<TrackSet<f32>> = (0..16).map(|i| generate_trackset(&spec, i).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = |rng: &mut ChaCha8Rng| -> AudioBuffer<f32> {
        let s = &sets[rng.random_range(0..sets.len())];
        let t = &s.tracks[rng.random_range(0..s.tracks.len())];
        t.signal.slice(rng.random_range(0..15) * HOP, HOP)
    };
    let fixed: Vec<_> = (0..16).map(|_| clip(&mut rng)).collect();
    let mut model = CodecModel::<f32>::new(CodecConfig::default(), &mut rng);
    let boundary_at_init = model.boundary_check(8, seed).unwrap();
    let mut trainer = CodecTrainer::new(&model, ConsistencyTrainConfig::default());
    let initial_loss = trainer.fixed_batch_loss(&model, &fixed, 7).unwrap() as f64;
    for _ in 0..steps {
        let batch: Vec<_> = (0..4).map(|_| clip(&mut rng)).collect();
        trainer.step(&mut model, &batch, &mut rng).unwrap();
    }
    CodecRun {
        initial_loss,
        final_loss: trainer.fixed_batch_loss(&model, &fixed, 7).unwrap() as f64,
        boundary_at_init,
        boundary_after: model.boundary_check(8, seed + 1).unwrap(),
    }
}
