//! Frozen toy embedder with an audio head and a role-descriptor head sharing
//! one 64-d unit-norm space.

use rand::Rng;

use crate::codec::{CodecModel, LatentSequence, LATENT_CHANNELS};
use crate::error::Result;
use crate::rngs::{normal, stream_rng};
use crate::scalar::Scalar;
use crate::synthdata::{role_prototype, Arrangement, Role};

pub const EMBED_DIM: usize = 64;
const FEATURES: usize = 2 * LATENT_CHANNELS;
const HIDDEN: usize = 128;
/// Prototype length in seconds.
const PROTOTYPE_SECONDS: f64 = 10.0;
/// Extra calibration renderings per role.
const CALIBRATION_VARIANTS: u64 = 4;

#[derive(Debug, Clone)]
pub struct Embedder {
    feat_mean: Vec<f64>,
    feat_scale: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    descriptors: Vec<Vec<f64>>,
}

/// Per-channel mean and standard deviation over frames.
fn pooled<T: Scalar>(z: &LatentSequence<T>) -> Vec<f64> {
    let v = z.values();
    let (f, c) = (v.dim(0), v.dim(1));
    let mut out = vec![0.0; 2 * c];
    for row in v.data().chunks(c) {
        for (j, x) in row.iter().enumerate() {
            out[j] += x.as_f64() / f as f64;
        }
    }
    for row in v.data().chunks(c) {
        for (j, x) in row.iter().enumerate() {
            out[c + j] += (x.as_f64() - out[j]).powi(2) / f as f64;
        }
    }
    for s in &mut out[c..] {
        *s = s.sqrt();
    }
    out
}

pub fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl Embedder {
    /// Seeds the projection and calibrates feature statistics on role
    /// prototypes passed through `codec`'s encoder.
    pub fn new<T: Scalar>(seed: u64, codec: &CodecModel<T>) -> Result<Self> {
        let sr = crate::codec::SAMPLE_RATE;
        let mut canonical = Vec::new();
        let mut calibration = Vec::new();
        for role in Role::ALL {
            let proto = codec.encode(&role_prototype::<T>(role, PROTOTYPE_SECONDS, sr, seed))?;
            calibration.push(pooled(&proto));
            canonical.push(pooled(&proto));
            for v in 0..CALIBRATION_VARIANTS {
                let mut rng = stream_rng(seed ^ 0x9e37_79b9, role.index() as u64 * 16 + v);
                let arr = Arrangement::random(&mut rng, PROTOTYPE_SECONDS);
                let gain = rng.random_range(0.5..0.95);
                let s = crate::synthdata::generate::render_role(role, &arr, PROTOTYPE_SECONDS, sr, gain, &mut rng);
                let audio = crate::synthdata::AudioBuffer {
                    samples: s.iter().map(|&x| T::lit(x)).collect(),
                    sample_rate: sr,
                };
                calibration.push(pooled(&codec.encode(&audio)?));
            }
        }
        let n = calibration.len() as f64;
        let mut feat_mean = vec![0.0; FEATURES];
        for f in &calibration {
            for (m, x) in feat_mean.iter_mut().zip(f) {
                *m += x / n;
            }
        }
        let mut feat_scale = vec![0.0; FEATURES];
        for f in &calibration {
            for ((s, x), m) in feat_scale.iter_mut().zip(f).zip(&feat_mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        for s in &mut feat_scale {
            *s = 1.0 / (s.sqrt() + 1e-3);
        }
        let mut rng = stream_rng(seed, 0xE4B);
        let w1 = (0..FEATURES * HIDDEN)
            .map(|_| normal::<f64, _>(&mut rng) / (FEATURES as f64).sqrt())
            .collect();
        let b1 = (0..HIDDEN).map(|_| 0.1 * normal::<f64, _>(&mut rng)).collect();
        let w2 = (0..HIDDEN * EMBED_DIM)
            .map(|_| normal::<f64, _>(&mut rng) / (HIDDEN as f64).sqrt())
            .collect();
        let mut e = Self {
            feat_mean,
            feat_scale,
            w1,
            b1,
            w2,
            descriptors: Vec::new(),
        };
        e.descriptors = canonical.iter().map(|f| e.head(f)).collect();
        Ok(e)
    }

    fn head(&self, features: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = features
            .iter()
            .zip(&self.feat_mean)
            .zip(&self.feat_scale)
            .map(|((f, m), s)| (f - m) * s)
            .collect();
        let mut h = self.b1.clone();
        for (i, xi) in x.iter().enumerate() {
            let row = &self.w1[i * HIDDEN..(i + 1) * HIDDEN];
            for (hj, w) in h.iter_mut().zip(row) {
                *hj += xi * w;
            }
        }
        h.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = vec![0.0; EMBED_DIM];
        for (i, hi) in h.iter().enumerate() {
            let row = &self.w2[i * EMBED_DIM..(i + 1) * EMBED_DIM];
            for (o, w) in out.iter_mut().zip(row) {
                *o += hi * w;
            }
        }
        normalize(&mut out);
        out
    }

    /// Audio head: unit-norm embedding of a latent sequence.
    pub fn embed_latent<T: Scalar>(&self, z: &LatentSequence<T>) -> Vec<f64> {
        self.head(&pooled(z))
    }

    /// Description head: the audio head applied to the role's encoded
    /// prototype.
    pub fn embed_descriptor(&self, role: Role) -> Vec<f64> {
        self.descriptors[role.index()].clone()
    }
}
