//! Denoising score-matching step for [`DenoiserModel`] with independent
//! dropout of the context and style sources.

use rand::Rng;

use crate::diffusion::model::{DenoiserModel, ForwardInputs};
use crate::error::{Error, Result};
use crate::nnkit::{adamw_step, ema_update, AdamWState, EmaState, LrSchedule, Tape, Tensor, Var};
use crate::rngs::normal;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LdmTrainConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub plateau_patience: u32,
    pub plateau_factor: f64,
    /// Steps per plateau evaluation; the signal is the mean loss over them.
    pub plateau_window: u64,
    pub weight_decay: f64,
    pub ema_momentum: f64,
    pub p_drop_context: f64,
    pub p_drop_style: f64,
    /// Log-normal training-noise distribution over σ.
    pub p_mean: f64,
    pub p_std: f64,
}

impl Default for LdmTrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            min_lr: 1e-6,
            warmup_steps: 500,
            plateau_patience: 5,
            plateau_factor: 0.5,
            plateau_window: 200,
            weight_decay: 1e-2,
            ema_momentum: 0.9999,
            p_drop_context: 0.5,
            p_drop_style: 0.5,
            p_mean: -1.2,
            p_std: 1.2,
        }
    }
}

impl LdmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(prob(self.p_drop_context) && prob(self.p_drop_style)) {
            return Err(Error::Config("dropout probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::Config("ema momentum must lie in [0, 1)".into()));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.base_lr) || !(self.p_std > 0.0) {
            return Err(Error::Config("invalid learning-rate or noise settings".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) || self.plateau_window == 0 {
            return Err(Error::Config("invalid plateau settings".into()));
        }
        Ok(())
    }
}

/// Clean targets with their conditioning, all `[B, F, C]` except style `[B, D]`.
#[derive(Debug, Clone)]
pub struct TrainBatch<T> {
    pub target: Tensor<T>,
    pub context: Tensor<T>,
    pub style: Tensor<T>,
}

/// Per-item random choices of one step.
#[derive(Debug, Clone)]
pub struct StepDraw<T> {
    pub sigmas: Vec<T>,
    pub noise: Tensor<T>,
    pub context_null: Vec<bool>,
    pub style_null: Vec<bool>,
}

/// Counts of dropped sources over all items seen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropoutStats {
    pub items: u64,
    pub context_null: u64,
    pub style_null: u64,
    pub both_null: u64,
}

impl DropoutStats {
    pub fn record(&mut self, context_null: &[bool], style_null: &[bool]) {
        for (&c, &s) in context_null.iter().zip(style_null) {
            self.items += 1;
            self.context_null += c as u64;
            self.style_null += s as u64;
            self.both_null += (c && s) as u64;
        }
    }

    fn frac(&self, n: u64) -> f64 {
        n as f64 / self.items.max(1) as f64
    }

    pub fn context_rate(&self) -> f64 {
        self.frac(self.context_null)
    }

    pub fn style_rate(&self) -> f64 {
        self.frac(self.style_null)
    }

    pub fn joint_rate(&self) -> f64 {
        self.frac(self.both_null)
    }
}

/// Draws σ, unit noise and the two dropout masks for a batch.
pub fn draw_step<T: Scalar, R: Rng + ?Sized>(cfg: &LdmTrainConfig, shape: &[usize], rng: &mut R) -> StepDraw<T> {
    let b = shape[0];
    let mut sigmas = Vec::with_capacity(b);
    let mut context_null = Vec::with_capacity(b);
    let mut style_null = Vec::with_capacity(b);
    for _ in 0..b {
        let z: f64 = normal(rng);
        sigmas.push(T::lit((cfg.p_mean + cfg.p_std * z).exp()));
        context_null.push(rng.random_bool(cfg.p_drop_context));
        style_null.push(rng.random_bool(cfg.p_drop_style));
    }
    let noise = Tensor::from_fn(shape.to_vec(), |_| normal(rng));
    StepDraw {
        sigmas,
        noise,
        context_null,
        style_null,
    }
}

/// Builds the preconditioned loss `mean((F − (y − c_skip·x)/c_out)²)` on
/// `tape`. It equals the mean of `‖D − y‖²/c_out²` in denoised space.
pub fn training_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    model: &DenoiserModel<T>,
    batch: &TrainBatch<T>,
    draw: &StepDraw<T>,
) -> Result<Var> {
    let y = &batch.target;
    let per = y.len() / y.dim(0).max(1);
    let mut noisy = y.clone();
    let mut goal = y.clone();
    for (i, ((xv, gv), &n)) in noisy
        .data_mut()
        .iter_mut()
        .zip(goal.data_mut())
        .zip(draw.noise.data())
        .enumerate()
    {
        let s = draw.sigmas[i / per];
        let sf = s.as_f64();
        let clean = *xv;
        *xv = clean + s * n;
        *gv = (clean - T::lit(model.cfg.c_skip(sf)) * *xv) / T::lit(model.cfg.c_out(sf));
    }
    let f = model.network_var(
        tape,
        &ForwardInputs {
            x: &noisy,
            sigmas: &draw.sigmas,
            context: Some(&batch.context),
            context_null: &draw.context_null,
            style: Some(&batch.style),
            style_null: &draw.style_null,
        },
    )?;
    let g = tape.input(goal);
    tape.mse(f, g)
}

/// EDM-weighted error of a denoised estimate: mean of `(D − y)²/c_out(σ)²`.
pub fn edm_loss<T: Scalar>(denoised: &Tensor<T>, clean: &Tensor<T>, sigmas: &[T], sigma_data: f64) -> Result<f64> {
    if denoised.shape() != clean.shape() || clean.dim(0) != sigmas.len() {
        return Err(Error::shape("edm_loss", denoised.shape(), clean.shape()));
    }
    let per = clean.len() / sigmas.len().max(1);
    let sd2 = sigma_data * sigma_data;
    let mut acc = 0.0;
    for (i, (&d, &y)) in denoised.data().iter().zip(clean.data()).enumerate() {
        let s = sigmas[i / per].as_f64();
        let c_out2 = s * s * sd2 / (s * s + sd2);
        let e = d.as_f64() - y.as_f64();
        acc += e * e / c_out2;
    }
    Ok(acc / clean.len().max(1) as f64)
}

/// Optimizer, learning-rate schedule, EMA and dropout bookkeeping.
pub struct LdmTrainer<T: Scalar> {
    pub cfg: LdmTrainConfig,
    optimizer: AdamWState<T>,
    schedule: LrSchedule<T>,
    ema: EmaState<T>,
    window_loss: f64,
    window_count: u64,
    pub steps: u64,
    pub skipped: u64,
    pub dropout: DropoutStats,
}

impl<T: Scalar> LdmTrainer<T> {
    pub fn new(model: &DenoiserModel<T>, cfg: LdmTrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = AdamWState::new(
            &model.store,
            T::lit(0.9),
            T::lit(0.999),
            T::lit(1e-8),
            T::lit(cfg.weight_decay),
        );
        let schedule = LrSchedule::new(
            T::lit(cfg.base_lr),
            T::lit(cfg.min_lr),
            cfg.warmup_steps,
            cfg.plateau_patience,
            T::lit(cfg.plateau_factor),
        );
        let mut ema = EmaState::new(T::lit(cfg.ema_momentum));
        ema_update(&model.store, &mut ema);
        Ok(Self {
            cfg,
            optimizer,
            schedule,
            ema,
            window_loss: 0.0,
            window_count: 0,
            steps: 0,
            skipped: 0,
            dropout: DropoutStats::default(),
        })
    }

    pub fn ema_shadow(&self) -> &[Tensor<T>] {
        self.ema.shadow().expect("initialised in new")
    }

    /// The model with EMA weights, used for sampling.
    pub fn ema_model(&self, model: &DenoiserModel<T>) -> DenoiserModel<T> {
        model.with_weights(self.ema_shadow())
    }

    pub fn lr_reductions(&self) -> u32 {
        self.schedule.reductions()
    }

    /// One optimizer + EMA step. A non-finite loss leaves the weights
    /// untouched, increments `skipped` and returns `NonFiniteLoss`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        model: &mut DenoiserModel<T>,
        batch: &TrainBatch<T>,
        rng: &mut R,
    ) -> Result<T> {
        let draw = draw_step(&self.cfg, batch.target.shape(), rng);
        self.dropout.record(&draw.context_null, &draw.style_null);
        let (loss, grads) = {
            let mut tape = Tape::new(&model.store);
            let l = training_loss(&mut tape, model, batch, &draw)?;
            let loss = tape.value(l).item();
            if !loss.as_f64().is_finite() {
                self.skipped += 1;
                return Err(Error::NonFiniteLoss);
            }
            (loss, tape.backward(l)?)
        };
        model.store.zero_grads();
        model.store.accumulate(&grads)?;
        self.window_loss += loss.as_f64();
        self.window_count += 1;
        let signal = (self.window_count == self.cfg.plateau_window).then(|| {
            let mean = self.window_loss / self.window_count as f64;
            self.window_loss = 0.0;
            self.window_count = 0;
            T::lit(mean)
        });
        let lr = self.schedule.lr(self.steps, signal);
        adamw_step(&mut model.store, &mut self.optimizer, lr)?;
        ema_update(&model.store, &mut self.ema);
        self.steps += 1;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::DenoiserConfig;
    use crate::diffusion::Denoiser;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DenoiserConfig {
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

    fn batch(seed: u64) -> TrainBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TrainBatch {
            target: Tensor::from_fn(vec![3, 5, 4], |_| 0.5 * normal::<f64, _>(&mut rng)),
            context: Tensor::from_fn(vec![3, 5, 4], |_| normal::<f64, _>(&mut rng)),
            style: Tensor::from_fn(vec![3, 4], |_| normal::<f64, _>(&mut rng)),
        }
    }

    #[test]
    fn perfect_denoiser_has_zero_loss() {
        let b = batch(0);
        let l = edm_loss(&b.target, &b.target, &[0.1, 1.0, 10.0], 0.5).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn tape_loss_matches_denoised_space_loss() {
        let m = DenoiserModel::<f64>::new(small(), &mut ChaCha8Rng::seed_from_u64(1));
        let b = batch(2);
        let draw = draw_step::<f64, _>(
            &LdmTrainConfig::default(),
            b.target.shape(),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let mut tape = Tape::new(&m.store);
        let l = training_loss(&mut tape, &m, &b, &draw).unwrap();
        let tape_loss = tape.value(l).item();
        let per = b.target.len() / 3;
        let noisy = Tensor::from_fn(b.target.shape().to_vec(), |i| {
            b.target.data()[i] + draw.sigmas[i / per] * draw.noise.data()[i]
        });
        let d = m
            .denoise_masked(&ForwardInputs {
                x: &noisy,
                sigmas: &draw.sigmas,
                context: Some(&b.context),
                context_null: &draw.context_null,
                style: Some(&b.style),
                style_null: &draw.style_null,
            })
            .unwrap();
        let direct = edm_loss(&d, &b.target, &draw.sigmas, 0.5).unwrap();
        assert!(
            (tape_loss - direct).abs() < 1e-9 * direct.max(1.0),
            "{tape_loss} {direct}"
        );
    }

    #[test]
    fn training_reduces_fixed_batch_loss() {
        let mut m = DenoiserModel::<f64>::new(small(), &mut ChaCha8Rng::seed_from_u64(4));
        let cfg = LdmTrainConfig {
            base_lr: 3e-3,
            warmup_steps: 10,
            ema_momentum: 0.9,
            ..Default::default()
        };
        let mut t = LdmTrainer::new(&m, cfg).unwrap();
        let b = batch(5);
        let eval = |m: &DenoiserModel<f64>| {
            let x = b.target.map(|v| v + 0.3);
            let d = m.denoise(&x, 0.3, Some(&b.context), Some(&b.style)).unwrap();
            edm_loss(&d, &b.target, &[0.3; 3], 0.5).unwrap()
        };
        let before = eval(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..150 {
            t.step(&mut m, &b, &mut rng).unwrap();
        }
        assert!(eval(&m) < before, "{} !< {before}", eval(&m));
        assert_eq!(t.steps, 150);
        assert_eq!(t.dropout.items, 450);
    }

    #[test]
    fn invalid_dropout_rejected() {
        let cfg = LdmTrainConfig {
            p_drop_style: 1.5,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
