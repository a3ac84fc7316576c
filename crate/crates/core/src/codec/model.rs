//! Strided-conv encoder and single-pass consistency decoder.
//!
//! The decoder is `f(x, t) = c_skip(t)·x + c_out(t)·F(c_in(t)·x, z, t)` with
//! `c_skip(t_min) = 1` and `c_out(t_min) = 0`, so `f(x, t_min) = x` holds for
//! every parameter state.

use std::path::Path;

use rand::Rng;

use crate::codec::latent::{LatentSequence, HOP, LATENT_CHANNELS};
use crate::error::{Error, Result};
use crate::nnkit::checkpoint::{find_number, meta_number, read_tensors, store_records, write_tensors, EMA_PREFIX};
use crate::nnkit::{film_modulate, sinusoidal_embedding, Conv1d, FilmProj, Linear, ParamStore, Tape, Tensor, Var};
use crate::rngs::{normal, stream_rng};
use crate::scalar::Scalar;
use crate::synthdata::AudioBuffer;

/// How the decoder output combines the noisy input and the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// `c_skip·x + c_out·F`: boundary condition holds structurally.
    Consistency,
    /// `x + F` with both scalings removed; used as a negative control.
    Ablated,
}

#[derive(Debug, Clone)]
pub struct CodecConfig {
    /// Decoder hidden width.
    pub hidden: usize,
    /// Width of the sinusoidal noise-level features.
    pub time_dim: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Number of levels of the consistency-training ladder.
    pub levels: usize,
    pub sigma_data: f64,
    pub parameterization: Parameterization,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            time_dim: 16,
            t_min: 0.002,
            t_max: 80.0,
            levels: 32,
            sigma_data: 0.5,
            parameterization: Parameterization::Consistency,
        }
    }
}

impl CodecConfig {
    pub fn c_skip(&self, t: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / ((t - self.t_min).powi(2) + sd2)
    }

    pub fn c_out(&self, t: f64) -> f64 {
        self.sigma_data * (t - self.t_min) / (self.sigma_data.powi(2) + t * t).sqrt()
    }

    pub fn c_in(&self, t: f64) -> f64 {
        1.0 / (t * t + self.sigma_data.powi(2)).sqrt()
    }

    /// Karras ρ = 7 ladder, ascending from `t_min` to `t_max`.
    pub fn ladder(&self) -> Vec<f64> {
        let n = self.levels;
        let (lo, hi) = (self.t_min.powf(1.0 / 7.0), self.t_max.powf(1.0 / 7.0));
        (0..n)
            .map(|i| {
                if i == 0 {
                    self.t_min
                } else if i == n - 1 {
                    self.t_max
                } else {
                    (lo + i as f64 / (n - 1) as f64 * (hi - lo)).powi(7)
                }
            })
            .collect()
    }
}

/// Hann-windowed cosines with log-spaced centres from 40 Hz to 1.8 kHz at
/// the toy sample rate, `[n, 1, kernel]`, each of norm √2. Initialising the
/// first encoder layer this way makes the squared outputs band energies
/// rather than broadband power.
fn filterbank<T: Scalar>(n: usize, kernel: usize) -> Tensor<T> {
    let sr = crate::codec::SAMPLE_RATE as f64;
    let (lo, hi) = (40f64.ln(), 1800f64.ln());
    let mut data = Vec::with_capacity(n * kernel);
    for j in 0..n {
        let f = (lo + (hi - lo) * j as f64 / (n - 1) as f64).exp();
        let taps: Vec<f64> = (0..kernel)
            .map(|i| {
                let hann = 0.5 - 0.5 * (std::f64::consts::TAU * (i as f64 + 0.5) / kernel as f64).cos();
                hann * (std::f64::consts::TAU * f * i as f64 / sr).cos()
            })
            .collect();
        let norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(taps.iter().map(|v| T::lit(v * std::f64::consts::SQRT_2 / norm)));
    }
    Tensor::new(vec![n, 1, kernel], data).expect("filterbank shape")
}

/// Parameter handles of the codec network.
#[derive(Debug, Clone)]
pub struct CodecNet {
    enc: [Conv1d; 3],
    dec_x: Conv1d,
    dec_z: Conv1d,
    time_fc: Linear,
    film: FilmProj,
    dec_mid: Conv1d,
    dec_out: Conv1d,
}

pub struct CodecModel<T: Scalar> {
    pub cfg: CodecConfig,
    pub net: CodecNet,
    pub store: ParamStore<T>,
}

impl<T: Scalar> CodecModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: CodecConfig, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let h = cfg.hidden;
        let enc = [
            Conv1d::new(&mut store, "enc.0", 1, 16, 64, 16, 24, rng),
            Conv1d::new(&mut store, "enc.1", 16, 32, 16, 16, 0, rng),
            Conv1d::new(&mut store, "enc.2", 32, LATENT_CHANNELS, 16, 16, 0, rng),
        ];
        store.get_mut(enc[0].w).value = filterbank(16, 64);
        let net = CodecNet {
            enc,
            dec_x: Conv1d::new(&mut store, "dec.x", 1, h, 1, 1, 0, rng),
            dec_z: Conv1d::new(&mut store, "dec.z", LATENT_CHANNELS, h, 1, 1, 0, rng),
            time_fc: Linear::new(&mut store, "dec.time", cfg.time_dim, 2 * cfg.time_dim, rng),
            film: FilmProj::new(&mut store, "dec.film", 2 * cfg.time_dim, h),
            dec_mid: Conv1d::same(&mut store, "dec.mid", h, h, 5, rng),
            dec_out: Conv1d::new(&mut store, "dec.out", h, 1, 1, 1, 0, rng),
        };
        Self { cfg, net, store }
    }

    /// Encodes one buffer into `len / 4096` latent frames.
    pub fn encode(&self, audio: &AudioBuffer<T>) -> Result<LatentSequence<T>> {
        let mut out = self.encode_batch(std::slice::from_ref(audio))?;
        Ok(out.pop().expect("one item"))
    }

    /// Encodes equal-length buffers in one pass.
    pub fn encode_batch(&self, audio: &[AudioBuffer<T>]) -> Result<Vec<LatentSequence<T>>> {
        let x = audio_tensor(audio)?;
        let mut tape = Tape::new(&self.store);
        let xv = tape.input(x);
        let z = self.net.encode_var(&mut tape, xv)?;
        let z = tape.value(z).transpose_last2()?;
        z.unstack().into_iter().map(LatentSequence::clamped).collect()
    }

    /// Single consistency-function evaluation from Gaussian noise at
    /// `t_render`, conditioned on `z`; output clamped to `[−1, 1]`.
    pub fn decode(&self, z: &LatentSequence<T>, t_render: T, seed: u64) -> Result<AudioBuffer<T>> {
        let len = z.frames() * HOP;
        let mut rng = stream_rng(seed, 0);
        let x = Tensor::from_fn(vec![1, 1, len], |_| t_render * normal::<T, _>(&mut rng));
        let zt = Tensor::stack(&[z.values().clone()])?.transpose_last2()?;
        let out = self.consistency_fn(&self.store, &x, &zt, &[t_render])?;
        let samples = out
            .into_data()
            .into_iter()
            .map(|v| v.max(-T::one()).min(T::one()))
            .collect();
        AudioBuffer::new(samples, crate::codec::SAMPLE_RATE)
    }

    /// `f(x, t)` for `x: [B, 1, L]`, `z: [B, 64, L/4096]`, evaluated with the
    /// parameters in `store` (the student's or a teacher copy).
    pub fn consistency_fn(&self, store: &ParamStore<T>, x: &Tensor<T>, z: &Tensor<T>, t: &[T]) -> Result<Tensor<T>> {
        let mut tape = Tape::new(store);
        let (xv, zv) = (tape.input(x.clone()), tape.input(z.clone()));
        let out = self.net.decode_var(&mut tape, &self.cfg, xv, zv, t)?;
        Ok(tape.value(out).clone())
    }

    /// Parameters, the teacher shadow when given, the configuration and any
    /// `extra` records.
    pub fn save(&self, path: &Path, teacher: Option<&[Tensor<T>]>, extra: Vec<(String, Tensor<T>)>) -> Result<()> {
        let c = &self.cfg;
        let mut records = store_records(&self.store, teacher);
        records.extend([
            meta_number("hidden", c.hidden as f64),
            meta_number("time_dim", c.time_dim as f64),
            meta_number("t_min", c.t_min),
            meta_number("t_max", c.t_max),
            meta_number("levels", c.levels as f64),
            meta_number("sigma_data", c.sigma_data),
            meta_number(
                "ablated",
                (c.parameterization == Parameterization::Ablated) as u8 as f64,
            ),
        ]);
        records.extend(extra);
        write_tensors(path, &records)
    }

    /// Loads a checkpoint written by [`CodecModel::save`], returning the
    /// teacher shadow when present.
    pub fn load(path: &Path) -> Result<(Self, Option<Vec<Tensor<T>>>)> {
        let records = read_tensors::<T>(path)?;
        let get = |k: &str| find_number(&records, k);
        let cfg = CodecConfig {
            hidden: get("hidden")? as usize,
            time_dim: get("time_dim")? as usize,
            t_min: get("t_min")?,
            t_max: get("t_max")?,
            levels: get("levels")? as usize,
            sigma_data: get("sigma_data")?,
            parameterization: if get("ablated")? != 0.0 {
                Parameterization::Ablated
            } else {
                Parameterization::Consistency
            },
        };
        let mut model = Self::new(cfg, &mut stream_rng(0, 0));
        model.store.load_values(&records, "")?;
        let teacher = if records.iter().any(|(n, _)| n.starts_with(EMA_PREFIX)) {
            let mut t = model.store.clone();
            t.load_values(&records, EMA_PREFIX)?;
            Some(t.values())
        } else {
            None
        };
        Ok((model, teacher))
    }

    /// Largest `|f(x, t_min) − x|` over `trials` random inputs and
    /// conditionings.
    pub fn boundary_check(&self, trials: usize, seed: u64) -> Result<f64> {
        let mut rng = stream_rng(seed, 0);
        let x = Tensor::from_fn(vec![trials, 1, HOP], |_| normal::<T, _>(&mut rng));
        let z = Tensor::from_fn(vec![trials, LATENT_CHANNELS, 1], |_| {
            T::lit(rng.random_range(-1.0..1.0))
        });
        let t = vec![T::lit(self.cfg.t_min); trials];
        let out = self.consistency_fn(&self.store, &x, &z, &t)?;
        Ok(out
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .fold(0.0, f64::max))
    }
}

/// Stacks equal-length buffers into `[B, 1, L]`, requiring `L % 4096 == 0`.
pub fn audio_tensor<T: Scalar>(audio: &[AudioBuffer<T>]) -> Result<Tensor<T>> {
    let len = audio.first().map(|a| a.len()).unwrap_or(0);
    if len == 0 || !len.is_multiple_of(HOP) {
        return Err(Error::PaddingRequired { len, hop: HOP });
    }
    let mut data = Vec::with_capacity(len * audio.len());
    for a in audio {
        if a.len() != len {
            return Err(Error::shape("audio batch", &[len], &[a.len()]));
        }
        data.extend_from_slice(&a.samples);
    }
    Tensor::new(vec![audio.len(), 1, len], data)
}

impl CodecNet {
    /// `[B, 1, L] → [B, 64, L/4096]`, tanh head.
    pub fn encode_var<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        // Squaring the first filter bank turns it into band energies, so
        // the latents do not depend on the phase of the waveform.
        let h = self.enc[0].forward(tape, x)?;
        let h = tape.mul(h, h)?;
        let h = self.enc[1].forward(tape, h)?;
        let h = tape.silu(h);
        let h = self.enc[2].forward(tape, h)?;
        Ok(tape.tanh(h))
    }

    /// Consistency function on the tape; `t` holds one level per batch item.
    pub fn decode_var<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        cfg: &CodecConfig,
        x: Var,
        z: Var,
        t: &[T],
    ) -> Result<Var> {
        let tf: Vec<f64> = t.iter().map(|v| v.as_f64()).collect();
        let lit = |f: &dyn Fn(f64) -> f64| tf.iter().map(|&v| T::lit(f(v))).collect::<Vec<T>>();
        let xin = tape.scale_batch(x, lit(&|v| cfg.c_in(v)))?;
        let hx = self.dec_x.forward(tape, xin)?;
        // A 1x1 conv commutes with nearest upsampling, so z is projected at
        // frame rate.
        let hz = self.dec_z.forward(tape, z)?;
        let hz = tape.upsample(hz, HOP)?;
        let h = tape.add(hx, hz)?;
        let temb = tape.input(sinusoidal_embedding(&lit(&|v| 250.0 * v.ln()), cfg.time_dim));
        let temb = self.time_fc.forward(tape, temb)?;
        let temb = tape.silu(temb);
        let h = film_modulate(tape, h, temb, &self.film)?;
        let h = tape.silu(h);
        let h = self.dec_mid.forward(tape, h)?;
        let h = tape.silu(h);
        let f = self.dec_out.forward(tape, h)?;
        match cfg.parameterization {
            Parameterization::Consistency => {
                let skip = tape.scale_batch(x, lit(&|v| cfg.c_skip(v)))?;
                let out = tape.scale_batch(f, lit(&|v| cfg.c_out(v)))?;
                tape.add(skip, out)
            }
            Parameterization::Ablated => tape.add(x, f),
        }
    }
}
