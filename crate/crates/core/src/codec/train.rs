//! Consistency training of the codec against an EMA teacher.

use rand::Rng;

use crate::codec::latent::HOP;
use crate::codec::model::{audio_tensor, CodecModel};
use crate::error::{Error, Result};
use crate::nnkit::{adamw_step, ema_update, AdamWState, EmaState, ParamStore, Tape, Tensor};
use crate::rngs::{normal, stream_rng};
use crate::scalar::Scalar;
use crate::synthdata::AudioBuffer;

/// Distribution over adjacent ladder pairs `(t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelSampling {
    Uniform,
    /// Unnormalised weight per pair index `0..levels−1`.
    Weighted(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ConsistencyTrainConfig {
    pub ema_teacher_momentum: f64,
    pub level_sampling: LevelSampling,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for ConsistencyTrainConfig {
    fn default() -> Self {
        Self {
            ema_teacher_momentum: 0.95,
            level_sampling: LevelSampling::Uniform,
            lr: 2e-3,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer and teacher state for [`CodecModel`] training.
pub struct CodecTrainer<T: Scalar> {
    pub cfg: ConsistencyTrainConfig,
    optimizer: AdamWState<T>,
    teacher: EmaState<T>,
    ladder: Vec<f64>,
    pub steps: u64,
    pub skipped: u64,
}

/// Per-item `(lower index, upper index)` ladder pairs and unit noise.
pub struct PairDraw<T> {
    pub pairs: Vec<(usize, usize)>,
    pub noise: Tensor<T>,
}

impl<T: Scalar> CodecTrainer<T> {
    pub fn new(model: &CodecModel<T>, cfg: ConsistencyTrainConfig) -> Self {
        let mut teacher = EmaState::new(T::lit(cfg.ema_teacher_momentum));
        ema_update(&model.store, &mut teacher);
        let optimizer = AdamWState::new(
            &model.store,
            T::lit(0.9),
            T::lit(0.999),
            T::lit(1e-8),
            T::lit(cfg.weight_decay),
        );
        Self {
            ladder: model.cfg.ladder(),
            cfg,
            optimizer,
            teacher,
            steps: 0,
            skipped: 0,
        }
    }

    /// Restores a trainer whose teacher shadow was saved with the model.
    pub fn with_teacher(model: &CodecModel<T>, cfg: ConsistencyTrainConfig, shadow: Vec<Tensor<T>>) -> Self {
        let mut t = Self::new(model, cfg);
        t.teacher = EmaState::from_shadow(T::lit(t.cfg.ema_teacher_momentum), shadow);
        t
    }

    pub fn teacher_shadow(&self) -> &[Tensor<T>] {
        self.teacher.shadow().expect("initialised in new")
    }

    pub fn teacher_store(&self, model: &CodecModel<T>) -> ParamStore<T> {
        self.teacher.materialize(&model.store)
    }

    pub fn draw_pairs<R: Rng + ?Sized>(&self, batch: usize, len: usize, rng: &mut R) -> PairDraw<T> {
        let n = self.ladder.len() - 1;
        let pairs = (0..batch)
            .map(|_| {
                let i = match &self.cfg.level_sampling {
                    LevelSampling::Uniform => rng.random_range(0..n),
                    LevelSampling::Weighted(w) => {
                        let total: f64 = w.iter().sum();
                        let mut u = rng.random_range(0.0..total);
                        w.iter()
                            .position(|&wi| {
                                u -= wi;
                                u < 0.0
                            })
                            .unwrap_or(n - 1)
                    }
                };
                (i, i + 1)
            })
            .collect();
        let noise = Tensor::from_fn(vec![batch, 1, len], |_| normal::<T, _>(rng));
        PairDraw { pairs, noise }
    }

    /// One optimizer step on the consistency loss; returns the loss. A
    /// non-finite loss leaves the model untouched and is reported as an error.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        model: &mut CodecModel<T>,
        batch: &[AudioBuffer<T>],
        rng: &mut R,
    ) -> Result<T> {
        let audio = audio_tensor(batch)?;
        let draw = self.draw_pairs(batch.len(), audio.dim(2), rng);
        let teacher = self.teacher_store(model);
        let (loss, grads) = {
            let mut tape = Tape::new(&model.store);
            let loss = pair_loss(model, &teacher, &mut tape, &audio, &self.ladder, &draw)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                self.skipped += 1;
                return Err(Error::NonFiniteLoss);
            }
            (value, tape.backward(loss)?)
        };
        model.store.zero_grads();
        model.store.accumulate(&grads)?;
        adamw_step(&mut model.store, &mut self.optimizer, T::lit(self.cfg.lr))?;
        ema_update(&model.store, &mut self.teacher);
        self.steps += 1;
        Ok(loss)
    }

    /// Loss on `batch` with pairs and noise fixed by `seed`, no update.
    pub fn fixed_batch_loss(&self, model: &CodecModel<T>, batch: &[AudioBuffer<T>], seed: u64) -> Result<T> {
        let audio = audio_tensor(batch)?;
        let draw = self.draw_pairs(batch.len(), audio.dim(2), &mut stream_rng(seed, 0));
        let teacher = self.teacher_store(model);
        consistency_loss(model, &teacher, &audio, &self.ladder, &draw)
    }
}

/// Mean squared distance between the student at the upper level and the
/// teacher at the lower level, both noised along the same direction.
pub fn consistency_loss<T: Scalar>(
    model: &CodecModel<T>,
    teacher: &ParamStore<T>,
    audio: &Tensor<T>,
    ladder: &[f64],
    draw: &PairDraw<T>,
) -> Result<T> {
    let mut tape = Tape::new(&model.store);
    let loss = pair_loss(model, teacher, &mut tape, audio, ladder, draw)?;
    Ok(tape.value(loss).item())
}

fn noised<T: Scalar>(audio: &Tensor<T>, noise: &Tensor<T>, levels: &[T]) -> Tensor<T> {
    let per = audio.len() / levels.len();
    let mut out = audio.clone();
    for (i, (o, &n)) in out.data_mut().iter_mut().zip(noise.data()).enumerate() {
        *o += levels[i / per] * n;
    }
    out
}

fn pair_loss<T: Scalar>(
    model: &CodecModel<T>,
    teacher: &ParamStore<T>,
    tape: &mut Tape<'_, T>,
    audio: &Tensor<T>,
    ladder: &[f64],
    draw: &PairDraw<T>,
) -> Result<crate::nnkit::Var> {
    debug_assert_eq!(audio.dim(2) % HOP, 0);
    let lo: Vec<T> = draw.pairs.iter().map(|p| T::lit(ladder[p.0])).collect();
    let hi: Vec<T> = draw.pairs.iter().map(|p| T::lit(ladder[p.1])).collect();

    let target = {
        let mut t = Tape::new(teacher);
        let a = t.input(audio.clone());
        let z = model.net.encode_var(&mut t, a)?;
        let x = t.input(noised(audio, &draw.noise, &lo));
        let out = model.net.decode_var(&mut t, &model.cfg, x, z, &lo)?;
        t.value(out).clone()
    };

    let a = tape.input(audio.clone());
    let z = model.net.encode_var(tape, a)?;
    let x = tape.input(noised(audio, &draw.noise, &hi));
    let student = model.net.decode_var(tape, &model.cfg, x, z, &hi)?;
    let target = tape.input(target);
    tape.mse(student, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_pair_has_zero_loss() {
        let model = CodecModel::<f64>::new(CodecConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let audio = Tensor::from_fn(vec![2, 1, HOP], |i| ((i % 97) as f64 / 97.0) - 0.5);
        let ladder = model.cfg.ladder();
        let draw = PairDraw {
            pairs: vec![(5, 5), (20, 20)],
            noise: Tensor::from_fn(vec![2, 1, HOP], |i| ((i % 13) as f64 / 13.0) - 0.5),
        };
        let loss = consistency_loss(&model, &model.store, &audio, &ladder, &draw).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn teacher_is_ema_of_student() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = CodecModel::<f64>::new(CodecConfig::default(), &mut rng);
        let cfg = ConsistencyTrainConfig {
            ema_teacher_momentum: 0.5,
            ..Default::default()
        };
        let mut trainer = CodecTrainer::new(&model, cfg);
        let before = model.store.values();
        let batch = vec![AudioBuffer::new(vec![0.1; HOP], 4096).unwrap()];
        trainer.step(&mut model, &batch, &mut rng).unwrap();
        let after = model.store.values();
        for ((s, b), a) in trainer.teacher_shadow().iter().zip(&before).zip(&after) {
            for ((&sv, &bv), &av) in s.data().iter().zip(b.data()).zip(a.data()) {
                assert_eq!(sv, 0.5 * bv + 0.5 * av);
            }
        }
    }
}
