//! Residual 1-D conv encoder/decoder denoiser with channel-concatenated
//! context, a fused style + noise-level embedding driving FiLM in every
//! block, and EDM preconditioning.

use std::path::Path;

use rand::Rng;

use crate::diffusion::guidance::Denoiser;
use crate::error::{Error, Result};
use crate::nnkit::checkpoint::{find_number, meta_number, read_tensors, store_records, write_tensors, EMA_PREFIX};
use crate::nnkit::{
    film_modulate, sinusoidal_embedding, Conv1d, FilmProj, Linear, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    /// Latent channels of the generated sequence (and of the context).
    pub channels: usize,
    /// Base width of the residual body; the inner level uses twice this.
    pub width: usize,
    pub style_dim: usize,
    /// Width of the sinusoidal noise-level features.
    pub noise_dim: usize,
    /// Width of the fused conditioning embedding.
    pub emb_dim: usize,
    pub groups: usize,
    pub sigma_data: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            width: 64,
            style_dim: 64,
            noise_dim: 64,
            emb_dim: 128,
            groups: 8,
            sigma_data: 0.5,
        }
    }
}

impl DenoiserConfig {
    pub fn c_skip(&self, s: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / (s * s + sd2)
    }

    pub fn c_out(&self, s: f64) -> f64 {
        s * self.sigma_data / (s * s + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_in(&self, s: f64) -> f64 {
        1.0 / (s * s + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_noise(&self, s: f64) -> f64 {
        s.ln() / 4.0
    }

    fn to_meta<T: Scalar>(&self) -> Vec<(String, Tensor<T>)> {
        vec![
            meta_number("channels", self.channels as f64),
            meta_number("width", self.width as f64),
            meta_number("style_dim", self.style_dim as f64),
            meta_number("noise_dim", self.noise_dim as f64),
            meta_number("emb_dim", self.emb_dim as f64),
            meta_number("groups", self.groups as f64),
            meta_number("sigma_data", self.sigma_data),
        ]
    }

    fn from_meta<T: Scalar>(records: &[(String, Tensor<T>)]) -> Result<Self> {
        let get = |k: &str| find_number(records, k);
        Ok(Self {
            channels: get("channels")? as usize,
            width: get("width")? as usize,
            style_dim: get("style_dim")? as usize,
            noise_dim: get("noise_dim")? as usize,
            emb_dim: get("emb_dim")? as usize,
            groups: get("groups")? as usize,
            sigma_data: get("sigma_data")?,
        })
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv1d,
    conv2: Conv1d,
    film: FilmProj,
    skip: Option<Conv1d>,
}

impl ResBlock {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        emb: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv1d::same(store, &format!("{name}.conv1"), cin, cout, 3, rng),
            conv2: Conv1d::same(store, &format!("{name}.conv2"), cout, cout, 3, rng),
            film: FilmProj::new(store, &format!("{name}.film"), emb, cout),
            skip: (cin != cout).then(|| Conv1d::new(store, &format!("{name}.skip"), cin, cout, 1, 1, 0, rng)),
        }
    }

    /// GN → SiLU → conv → GN → FiLM → SiLU → conv, plus the skip path.
    fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, emb: Var, groups: usize) -> Result<Var> {
        let h = tape.group_norm(x, groups)?;
        let h = tape.silu(h);
        let h = self.conv1.forward(tape, h)?;
        let h = tape.group_norm(h, groups)?;
        let h = film_modulate(tape, h, emb, &self.film)?;
        let h = tape.silu(h);
        let h = self.conv2.forward(tape, h)?;
        let s = match &self.skip {
            Some(c) => c.forward(tape, x)?,
            None => x,
        };
        tape.add(h, s)
    }
}

#[derive(Debug, Clone)]
struct Net {
    null_style: ParamId,
    emb1: Linear,
    emb2: Linear,
    conv_in: Conv1d,
    enc1: ResBlock,
    down1: Conv1d,
    enc2: ResBlock,
    down2: Conv1d,
    dec2: ResBlock,
    dec1: ResBlock,
    conv_out: Conv1d,
}

/// Per-item conditioning for one forward pass. Null items use the learned
/// null style vector and a zero context block with the flag channel set.
pub struct ForwardInputs<'a, T> {
    /// Noisy latents `[B, F, C]`.
    pub x: &'a Tensor<T>,
    pub sigmas: &'a [T],
    /// Context latents `[B, F, C]`; ignored on null rows.
    pub context: Option<&'a Tensor<T>>,
    pub context_null: &'a [bool],
    /// Style embeddings `[B, D]`; ignored on null rows.
    pub style: Option<&'a Tensor<T>>,
    pub style_null: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct DenoiserModel<T: Scalar> {
    pub cfg: DenoiserConfig,
    pub store: ParamStore<T>,
    net: Net,
}

impl<T: Scalar> DenoiserModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: DenoiserConfig, rng: &mut R) -> Self {
        let mut s = ParamStore::new();
        let (w, e, c) = (cfg.width, cfg.emb_dim, cfg.channels);
        let null_style = s.add("null_style", Tensor::zeros(vec![cfg.style_dim]));
        let net = Net {
            null_style,
            emb1: Linear::new(&mut s, "emb1", cfg.style_dim + cfg.noise_dim, e, rng),
            emb2: Linear::new(&mut s, "emb2", e, e, rng),
            conv_in: Conv1d::same(&mut s, "conv_in", 2 * c + 1, w, 3, rng),
            enc1: ResBlock::new(&mut s, "enc1", w, w, e, rng),
            down1: Conv1d::new(&mut s, "down1", w, w, 3, 2, 1, rng),
            enc2: ResBlock::new(&mut s, "enc2", w, 2 * w, e, rng),
            down2: Conv1d::new(&mut s, "down2", 2 * w, 2 * w, 3, 2, 1, rng),
            dec2: ResBlock::new(&mut s, "dec2", 4 * w, 2 * w, e, rng),
            dec1: ResBlock::new(&mut s, "dec1", 3 * w, w, e, rng),
            conv_out: Conv1d::same(&mut s, "conv_out", w, c, 3, rng),
        };
        Self { cfg, store: s, net }
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Copy of the model carrying `values` (e.g. EMA shadows) as weights.
    pub fn with_weights(&self, values: &[Tensor<T>]) -> Self {
        let mut m = self.clone();
        m.store.set_values(values);
        m
    }

    /// Network input `[B, 2C+1, F]`: `c_in·x`, context (zeroed on null rows)
    /// and the null-context flag.
    fn input_tensor(&self, inp: &ForwardInputs<'_, T>) -> Result<Tensor<T>> {
        let (b, f, c) = (inp.x.dim(0), inp.x.dim(1), inp.x.dim(2));
        if c != self.cfg.channels || inp.sigmas.len() != b || inp.context_null.len() != b {
            return Err(Error::shape(
                "denoiser input",
                inp.x.shape(),
                &[b, f, self.cfg.channels],
            ));
        }
        if let Some(ctx) = inp.context {
            if ctx.shape() != inp.x.shape() {
                return Err(Error::shape("denoiser context", ctx.shape(), inp.x.shape()));
            }
        }
        let ch = 2 * c + 1;
        let mut out = vec![T::zero(); b * ch * f];
        let xv = inp.x.data();
        for bi in 0..b {
            let cin = T::lit(self.cfg.c_in(inp.sigmas[bi].as_f64()));
            let base = bi * ch * f;
            for fi in 0..f {
                for ci in 0..c {
                    out[base + ci * f + fi] = cin * xv[(bi * f + fi) * c + ci];
                }
            }
            match (inp.context, inp.context_null[bi]) {
                (Some(ctx), false) => {
                    let cv = ctx.data();
                    for fi in 0..f {
                        for ci in 0..c {
                            out[base + (c + ci) * f + fi] = cv[(bi * f + fi) * c + ci];
                        }
                    }
                }
                _ => out[base + 2 * c * f..base + ch * f].fill(T::one()),
            }
        }
        Tensor::new(vec![b, ch, f], out)
    }

    /// Raw network output `F` as `[B, F, C]` on the tape.
    pub fn network_var(&self, tape: &mut Tape<'_, T>, inp: &ForwardInputs<'_, T>) -> Result<Var> {
        let (b, f) = (inp.x.dim(0), inp.x.dim(1));
        let cfg = &self.cfg;
        let n = &self.net;
        if inp.style_null.len() != b {
            return Err(Error::CountMismatch(inp.style_null.len(), b));
        }
        let mut style = Tensor::zeros(vec![b, cfg.style_dim]);
        if let Some(s) = inp.style {
            if s.shape() != [b, cfg.style_dim] {
                return Err(Error::shape("denoiser style", s.shape(), &[b, cfg.style_dim]));
            }
            for bi in (0..b).filter(|&bi| !inp.style_null[bi]) {
                style.row_mut(bi).copy_from_slice(s.row(bi));
            }
        }
        let null_coeffs = inp
            .style_null
            .iter()
            .map(|&nl| if nl || inp.style.is_none() { T::one() } else { T::zero() })
            .collect();
        let sv = tape.input(style);
        let nullv = tape.param(n.null_style);
        let nullv = tape.broadcast_rows(nullv, null_coeffs)?;
        let sv = tape.add(sv, nullv)?;
        let noise: Vec<T> = inp
            .sigmas
            .iter()
            .map(|s| T::lit(1000.0 * cfg.c_noise(s.as_f64())))
            .collect();
        let nv = tape.input(sinusoidal_embedding(&noise, cfg.noise_dim));
        let emb = tape.concat(&[sv, nv])?;
        let emb = n.emb1.forward(tape, emb)?;
        let emb = tape.silu(emb);
        let emb = n.emb2.forward(tape, emb)?;
        let emb = tape.silu(emb);

        let x = tape.input(self.input_tensor(inp)?);
        let h0 = n.conv_in.forward(tape, x)?;
        let s1 = n.enc1.forward(tape, h0, emb, cfg.groups)?;
        let d1 = n.down1.forward(tape, s1)?;
        let s2 = n.enc2.forward(tape, d1, emb, cfg.groups)?;
        let f2 = tape.value(s2).dim(2);
        let d2 = n.down2.forward(tape, s2)?;
        let u2 = tape.upsample(d2, 2)?;
        let u2 = tape.crop(u2, f2)?;
        let u2 = tape.concat(&[u2, s2])?;
        let h2 = n.dec2.forward(tape, u2, emb, cfg.groups)?;
        let u1 = tape.upsample(h2, 2)?;
        let u1 = tape.crop(u1, f)?;
        let u1 = tape.concat(&[u1, s1])?;
        let h1 = n.dec1.forward(tape, u1, emb, cfg.groups)?;
        let h = tape.group_norm(h1, cfg.groups)?;
        let h = tape.silu(h);
        let out = n.conv_out.forward(tape, h)?;
        tape.transpose(out)
    }

    /// `D = c_skip·x + c_out·F` evaluated with per-item null masks.
    pub fn denoise_masked(&self, inp: &ForwardInputs<'_, T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new(&self.store);
        let fv = self.network_var(&mut tape, inp)?;
        let net_out = tape.value(fv);
        let per = inp.x.len() / inp.sigmas.len().max(1);
        let mut out = inp.x.clone();
        for (i, (o, &fo)) in out.data_mut().iter_mut().zip(net_out.data()).enumerate() {
            let s = inp.sigmas[i / per].as_f64();
            *o = T::lit(self.cfg.c_skip(s)) * *o + T::lit(self.cfg.c_out(s)) * fo;
        }
        Ok(out)
    }

    /// Parameters, optional EMA shadows, the architecture as meta records
    /// and any `extra` records.
    pub fn save(&self, path: &Path, ema: Option<&[Tensor<T>]>, extra: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut records = store_records(&self.store, ema);
        records.extend(self.cfg.to_meta());
        records.extend(extra);
        write_tensors(path, &records)
    }

    /// Loads a checkpoint. With `use_ema`, the EMA shadows become the weights.
    pub fn load(path: &Path, use_ema: bool) -> Result<(Self, Option<Vec<Tensor<T>>>)> {
        let records = read_tensors::<T>(path)?;
        let cfg = DenoiserConfig::from_meta(&records)?;
        let mut rng = crate::rngs::stream_rng(0, 0);
        let mut model = Self::new(cfg, &mut rng);
        model.store.load_values(&records, "")?;
        let has_ema = records.iter().any(|(n, _)| n.starts_with(EMA_PREFIX));
        let shadow = if has_ema {
            let mut shadow_store = model.store.clone();
            shadow_store.load_values(&records, EMA_PREFIX)?;
            Some(shadow_store.values())
        } else {
            None
        };
        if use_ema {
            if let Some(s) = &shadow {
                model.store.set_values(s);
            }
        }
        Ok((model, shadow))
    }
}

impl<T: Scalar> Denoiser<T> for DenoiserModel<T> {
    fn channels(&self) -> usize {
        self.cfg.channels
    }

    fn denoise(
        &self,
        x: &Tensor<T>,
        sigma: T,
        context: Option<&Tensor<T>>,
        style: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let b = x.dim(0);
        let sigmas = vec![sigma; b];
        let context_null = vec![context.is_none(); b];
        let style_null = vec![style.is_none(); b];
        self.denoise_masked(&ForwardInputs {
            x,
            sigmas: &sigmas,
            context,
            context_null: &context_null,
            style,
            style_null: &style_null,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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

    #[test]
    fn default_size_is_desk_scale() {
        let m = DenoiserModel::<f32>::new(DenoiserConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let n = m.num_parameters();
        assert!((400_000..1_000_000).contains(&n), "{n}");
    }

    #[test]
    fn shapes_for_odd_and_even_lengths() {
        let m = DenoiserModel::<f64>::new(small(), &mut ChaCha8Rng::seed_from_u64(0));
        for f in [1, 3, 5, 10] {
            let x = Tensor::from_fn(vec![2, f, 4], |i| (i as f64).sin());
            let ctx = Tensor::from_fn(vec![2, f, 4], |i| (i as f64).cos());
            let out = m.denoise(&x, 1.3, Some(&ctx), None).unwrap();
            assert_eq!(out.shape(), &[2, f, 4]);
        }
    }

    #[test]
    fn null_context_ignores_context_values() {
        let m = DenoiserModel::<f64>::new(small(), &mut ChaCha8Rng::seed_from_u64(0));
        let x = Tensor::from_fn(vec![2, 5, 4], |i| (i as f64 * 0.3).sin());
        let c1 = Tensor::from_fn(vec![2, 5, 4], |i| (i as f64).cos());
        let c2 = c1.map(|v| -v);
        let run = |c: &Tensor<f64>| {
            m.denoise_masked(&ForwardInputs {
                x: &x,
                sigmas: &[0.5, 2.0],
                context: Some(c),
                context_null: &[true, false],
                style: None,
                style_null: &[true, true],
            })
            .unwrap()
        };
        let (a, b) = (run(&c1), run(&c2));
        assert_eq!(a.row(0), b.row(0));
        assert_ne!(a.row(1), b.row(1));
        let none = m.denoise(&x, 0.5, None, None).unwrap();
        assert_eq!(none.row(0), a.row(0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = DenoiserModel::<f32>::new(small(), &mut ChaCha8Rng::seed_from_u64(3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ldm.darf");
        let shadow: Vec<Tensor<f32>> = m.store.values().iter().map(|t| t.map(|v| v * 0.5)).collect();
        m.save(&path, Some(&shadow), Vec::new()).unwrap();
        let (back, ema) = DenoiserModel::<f32>::load(&path, false).unwrap();
        assert_eq!(back.cfg, m.cfg);
        assert_eq!(back.store.values(), m.store.values());
        assert_eq!(ema.unwrap(), shadow);
        let (ema_model, _) = DenoiserModel::<f32>::load(&path, true).unwrap();
        assert_eq!(ema_model.store.values(), shadow);
    }
}
