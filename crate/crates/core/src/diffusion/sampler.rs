//! Reverse-process samplers: plain, pseudo-stereo and mask-constrained.
//!
//! Each batch item owns independent RNG lanes derived from
//! `(seed, item)`, so any split of a batch into chunks yields identical
//! samples.

use rand_chacha::ChaCha8Rng;

use crate::diffusion::guidance::{guided_denoise, ConditioningBundle, Denoiser};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nnkit::Tensor;
use crate::rngs::{normal, stream_rng};
use crate::scalar::Scalar;

/// Drift discretisation of each reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    /// One denoiser evaluation per step.
    Euler,
    /// Two denoiser evaluations per step (second order in the drift).
    Heun,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig<T> {
    pub schedule: NoiseSchedule<T>,
    /// 0 = probability-flow ODE step, 1 = full ancestral SDE step.
    pub stochasticity: T,
    pub stereo_width: T,
    pub seed: u64,
    pub integrator: Integrator,
    /// Index of the first batch item, for chunked sampling.
    pub first_item: u64,
}

impl<T: Scalar> SamplerConfig<T> {
    pub fn new(schedule: NoiseSchedule<T>, seed: u64) -> Self {
        Self {
            schedule,
            stochasticity: T::one(),
            stereo_width: T::zero(),
            seed,
            integrator: Integrator::Heun,
            first_item: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !unit(self.stochasticity) {
            return Err(Error::InvalidArgument(format!(
                "stochasticity {} outside [0, 1]",
                self.stochasticity
            )));
        }
        if !unit(self.stereo_width) {
            return Err(Error::InvalidArgument(format!(
                "stereo width {} outside [0, 1]",
                self.stereo_width
            )));
        }
        Ok(())
    }

    /// `(shared, forked)` step counts: `⌈(1−width)·T⌉` shared steps.
    pub fn stereo_split(&self) -> (usize, usize) {
        let t = self.schedule.steps();
        let shared = ((T::one() - self.stereo_width).as_f64() * t as f64 - 1e-9)
            .ceil()
            .max(0.0) as usize;
        let shared = shared.min(t);
        (shared, t - shared)
    }
}

#[derive(Clone, Copy)]
enum Lane {
    Main = 0,
    Left = 1,
    Right = 2,
    Mask = 3,
}

fn lanes<T: Scalar>(cfg: &SamplerConfig<T>, batch: usize, lane: Lane) -> Vec<ChaCha8Rng> {
    (0..batch as u64)
        .map(|b| stream_rng(cfg.seed, (cfg.first_item + b) * 4 + lane as u64))
        .collect()
}

fn draw<T: Scalar>(rngs: &mut [ChaCha8Rng], shape: &[usize]) -> Tensor<T> {
    let per = shape[1..].iter().product::<usize>();
    let mut data = Vec::with_capacity(per * rngs.len());
    for rng in rngs.iter_mut() {
        data.extend((0..per).map(|_| normal::<T, _>(rng)));
    }
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Score of the noised marginal implied by a denoised estimate.
pub fn score_from_denoised<T: Scalar>(x: &Tensor<T>, denoised: &Tensor<T>, sigma: T) -> Result<Tensor<T>> {
    let inv = T::one() / (sigma * sigma);
    denoised.zip_map(x, |d, v| (d - v) * inv)
}

/// Split of a reverse step into its deterministic target level `σ_down` and
/// re-injected noise `σ_up` (`σ_up = min(σ_next, η·σ_next·√(1 − σ_next²/σ²))`,
/// `σ_down² + σ_up² = σ_next²`).
pub fn ancestral_split<T: Scalar>(sigma: T, sigma_next: T, eta: T) -> (T, T) {
    let ratio = (sigma_next * sigma_next) / (sigma * sigma);
    let sigma_up = (eta * sigma_next * (T::one() - ratio).max(T::zero()).sqrt()).min(sigma_next);
    let sigma_down = (sigma_next * sigma_next - sigma_up * sigma_up).max(T::zero()).sqrt();
    (sigma_down, sigma_up)
}

/// One first-order reverse step from `sigma` to `sigma_next`.
///
/// The drift uses `dx/dσ = −σ·score` down to `σ_down`, then `σ_up` of fresh
/// noise is added. The final step to `σ = 0` returns the denoised estimate
/// exactly.
pub fn reverse_step<T: Scalar>(
    x: &Tensor<T>,
    denoised: &Tensor<T>,
    sigma: T,
    sigma_next: T,
    eta: T,
    rngs: &mut [ChaCha8Rng],
) -> Result<Tensor<T>> {
    if sigma_next == T::zero() {
        return Ok(denoised.clone());
    }
    let (sigma_down, sigma_up) = ancestral_split(sigma, sigma_next, eta);
    let score = score_from_denoised(x, denoised, sigma)?;
    let dt = sigma_down - sigma;
    let out = x.zip_map(&score, |v, s| v - sigma * s * dt)?;
    Ok(add_noise(out, sigma_up, rngs))
}

fn add_noise<T: Scalar>(mut x: Tensor<T>, sigma_up: T, rngs: &mut [ChaCha8Rng]) -> Tensor<T> {
    if sigma_up > T::zero() {
        let z = draw::<T>(rngs, x.shape());
        for (o, &n) in x.data_mut().iter_mut().zip(z.data()) {
            *o += sigma_up * n;
        }
    }
    x
}

/// Reverse step with a trapezoidal (Heun) correction in the denoised space:
/// the first-order step to `σ_down` is re-denoised there, and the step is
/// retaken from `x` with the average of the two denoised estimates. Every
/// update stays a convex combination of `x` and denoiser outputs, so large
/// steps cannot amplify denoiser error. Falls back to [`reverse_step`] when
/// `σ_down = 0`.
fn heun_step<T: Scalar>(
    x: &Tensor<T>,
    denoised: &Tensor<T>,
    sigma: T,
    sigma_next: T,
    eta: T,
    rngs: &mut [ChaCha8Rng],
    denoise: &mut dyn FnMut(&Tensor<T>, T) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let (sigma_down, _) = ancestral_split(sigma, sigma_next, eta);
    if sigma_down == T::zero() || sigma_next == T::zero() {
        return reverse_step(x, denoised, sigma, sigma_next, eta, rngs);
    }
    let r = sigma_down / sigma;
    let euler = x.zip_map(denoised, |v, d| r * v + (T::one() - r) * d)?;
    let denoised1 = denoise(&euler, sigma_down)?;
    let half = T::lit(0.5);
    let mean = denoised.zip_map(&denoised1, |a, b| half * (a + b))?;
    reverse_step(x, &mean, sigma, sigma_next, eta, rngs)
}

fn run_steps<T: Scalar, D: Denoiser<T> + ?Sized>(
    mut x: Tensor<T>,
    steps: std::ops::Range<usize>,
    cond: &ConditioningBundle<T>,
    cfg: &SamplerConfig<T>,
    model: &D,
    rngs: &mut [ChaCha8Rng],
    mut after_step: impl FnMut(&mut Tensor<T>, T),
) -> Result<Tensor<T>> {
    let sched = &cfg.schedule;
    let mut denoise = |x: &Tensor<T>, sigma: T| guided_denoise(x, sigma, cond, model);
    for i in steps {
        let sigma = sched.levels[i];
        let sigma_next = sched.next_level(i);
        let denoised = denoise(&x, sigma)?;
        x = match cfg.integrator {
            Integrator::Euler => reverse_step(&x, &denoised, sigma, sigma_next, cfg.stochasticity, rngs)?,
            Integrator::Heun => heun_step(&x, &denoised, sigma, sigma_next, cfg.stochasticity, rngs, &mut denoise)?,
        };
        after_step(&mut x, sigma_next);
    }
    Ok(x)
}

fn initial_noise<T: Scalar>(cfg: &SamplerConfig<T>, rngs: &mut [ChaCha8Rng], shape: &[usize]) -> Tensor<T> {
    let s = cfg.schedule.sigma_max;
    draw::<T>(rngs, shape).map(|v| v * s)
}

/// Generates `batch` latent sequences of `frames` frames, `[batch, frames, C]`.
pub fn sample<T: Scalar, D: Denoiser<T> + ?Sized>(
    cond: &ConditioningBundle<T>,
    cfg: &SamplerConfig<T>,
    model: &D,
    batch: usize,
    frames: usize,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let shape = [batch, frames, model.channels()];
    let mut rngs = lanes(cfg, batch, Lane::Main);
    let x = initial_noise(cfg, &mut rngs, &shape);
    run_steps(x, 0..cfg.schedule.steps(), cond, cfg, model, &mut rngs, |_, _| {})
}

/// Shared chain for `⌈(1−width)·T⌉` steps, then two independently noised
/// completions (left, right).
pub fn pseudo_stereo_sample<T: Scalar, D: Denoiser<T> + ?Sized>(
    cond: &ConditioningBundle<T>,
    cfg: &SamplerConfig<T>,
    model: &D,
    batch: usize,
    frames: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    cfg.validate()?;
    let (shared, _) = cfg.stereo_split();
    let total = cfg.schedule.steps();
    let shape = [batch, frames, model.channels()];
    let mut rngs = lanes(cfg, batch, Lane::Main);
    let x = initial_noise(cfg, &mut rngs, &shape);
    let trunk = run_steps(x, 0..shared, cond, cfg, model, &mut rngs, |_, _| {})?;
    if shared == total {
        return Ok((trunk.clone(), trunk));
    }
    let mut left_rngs = lanes(cfg, batch, Lane::Left);
    let mut right_rngs = lanes(cfg, batch, Lane::Right);
    let left = run_steps(
        trunk.clone(),
        shared..total,
        cond,
        cfg,
        model,
        &mut left_rngs,
        |_, _| {},
    )?;
    let right = run_steps(trunk, shared..total, cond, cfg, model, &mut right_rngs, |_, _| {})?;
    Ok((left, right))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Inpaint,
    Outpaint,
    Variation,
    Loop,
}

/// Constraint for [`masked_sample`]. `generate[f]` is true where frame `f`
/// is produced by the model; elsewhere the reference `[frames, C]` is kept.
#[derive(Debug, Clone)]
pub struct MaskSpec<T> {
    pub mode: MaskMode,
    pub generate: Vec<bool>,
    pub reference: Tensor<T>,
    /// Re-noise level for [`MaskMode::Variation`].
    pub renoise_sigma: Option<T>,
}

impl<T: Scalar> MaskSpec<T> {
    pub fn inpaint(reference: Tensor<T>, generate: Vec<bool>) -> Self {
        Self {
            mode: MaskMode::Inpaint,
            generate,
            reference,
            renoise_sigma: None,
        }
    }

    /// Keeps the first `keep` frames and extends past them.
    pub fn outpaint(reference: Tensor<T>, keep: usize) -> Self {
        let frames = reference.dim(0);
        Self {
            mode: MaskMode::Outpaint,
            generate: (0..frames).map(|f| f >= keep).collect(),
            reference,
            renoise_sigma: None,
        }
    }

    pub fn variation(reference: Tensor<T>, renoise_sigma: T) -> Self {
        let frames = reference.dim(0);
        Self {
            mode: MaskMode::Variation,
            generate: vec![true; frames],
            reference,
            renoise_sigma: Some(renoise_sigma),
        }
    }

    /// Pins the first `k` and last `k` frames to the reference's last `k`
    /// frames, so the output repeats seamlessly with period `frames − k`.
    pub fn looped(reference: Tensor<T>, k: usize) -> Result<Self> {
        let (frames, ch) = (reference.dim(0), reference.dim(1));
        if k == 0 || 2 * k > frames {
            return Err(Error::InvalidArgument(format!(
                "loop overlap {k} invalid for {frames} frames"
            )));
        }
        let mut pinned = reference.clone();
        let tail = reference.data()[(frames - k) * ch..].to_vec();
        pinned.data_mut()[..k * ch].copy_from_slice(&tail);
        Ok(Self {
            mode: MaskMode::Loop,
            generate: (0..frames).map(|f| f >= k && f < frames - k).collect(),
            reference: pinned,
            renoise_sigma: None,
        })
    }
}

/// Mask-constrained generation: in/out-painting, loops and variations.
pub fn masked_sample<T: Scalar, D: Denoiser<T> + ?Sized>(
    cond: &ConditioningBundle<T>,
    cfg: &SamplerConfig<T>,
    mask: &MaskSpec<T>,
    model: &D,
    batch: usize,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let frames = mask.generate.len();
    let ch = model.channels();
    if mask.reference.shape() != [frames, ch] {
        return Err(Error::MaskMismatch {
            expected: frames,
            got: mask.reference.dim(0),
        });
    }
    let shape = [batch, frames, ch];
    let mut rngs = lanes(cfg, batch, Lane::Main);
    let sched = &cfg.schedule;

    if mask.mode == MaskMode::Variation {
        let level = mask.renoise_sigma.unwrap_or(sched.sigma_max);
        let start = sched.levels.iter().position(|&l| l <= level).unwrap_or(sched.steps());
        if start == sched.steps() {
            return Tensor::stack(&vec![mask.reference.clone(); batch]);
        }
        let sigma0 = sched.levels[start];
        let z = draw::<T>(&mut rngs, &shape);
        let mut x = z;
        for b in 0..batch {
            for (v, &r) in x.row_mut(b).iter_mut().zip(mask.reference.data()) {
                *v = r + sigma0 * *v;
            }
        }
        return run_steps(x, start..sched.steps(), cond, cfg, model, &mut rngs, |_, _| {});
    }

    let known: Vec<usize> = (0..frames).filter(|&f| !mask.generate[f]).collect();
    let mut mask_rngs = lanes(cfg, batch, Lane::Mask);
    let reference = mask.reference.data();
    let mut pin = |x: &mut Tensor<T>, sigma: T| {
        if known.is_empty() {
            return;
        }
        for (b, rng) in mask_rngs.iter_mut().enumerate() {
            let row = x.row_mut(b);
            for &f in &known {
                for c in 0..ch {
                    let r = reference[f * ch + c];
                    row[f * ch + c] = if sigma == T::zero() {
                        r
                    } else {
                        r + sigma * normal::<T, _>(rng)
                    };
                }
            }
        }
    };
    let mut x = initial_noise(cfg, &mut rngs, &shape);
    pin(&mut x, sched.sigma_max);
    run_steps(x, 0..sched.steps(), cond, cfg, model, &mut rngs, pin)
}
