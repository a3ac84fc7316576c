//! Role-dependent procedural tracks sharing key, register, brightness,
//! tempo, chords and a section loudness envelope, so tracks of one set are
//! statistically dependent.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rngs::stream_rng;
use crate::scalar::Scalar;
use crate::synthdata::{AudioBuffer, DatasetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Bass,
    Guitar,
    Piano,
    Drums,
    Vocal,
    Other,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Bass,
        Role::Guitar,
        Role::Piano,
        Role::Drums,
        Role::Vocal,
        Role::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Role> {
        Role::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Bass => "bass",
            Role::Guitar => "guitar",
            Role::Piano => "piano",
            Role::Drums => "drums",
            Role::Vocal => "vocal",
            Role::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track<T> {
    pub role: Role,
    pub signal: AudioBuffer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet<T> {
    pub tracks: Vec<Track<T>>,
    pub tempo_factor: f64,
    pub key_index: u8,
}

impl<T> TrackSet<T> {
    pub fn len_samples(&self) -> usize {
        self.tracks[0].signal.samples.len()
    }
}

/// Musical parameters shared by every track of one set.
#[derive(Debug, Clone)]
pub struct Arrangement {
    pub key_index: u8,
    pub tempo_factor: f64,
    /// Scale degrees (semitones above the key) of the repeating 4-bar loop.
    pub progression: [u8; 4],
    /// Loudness level per 8-second section.
    pub sections: Vec<f64>,
    /// Octave shift of every pitched role.
    pub register: i8,
    /// Spectral tilt in `[0, 1]`: weight of upper partials and brightness of
    /// the drum noise.
    pub brightness: f64,
}

const SECTION_SECONDS: f64 = 8.0;
/// Quietest section level; levels are log-uniform up to 1 (30 dB range).
const MIN_SECTION_LEVEL: f64 = 0.03;
const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];

impl Arrangement {
    pub fn random(rng: &mut ChaCha8Rng, seconds: f64) -> Self {
        let degrees = [0u8, 5, 7, 9];
        let mut progression = [0u8; 4];
        for (i, p) in progression.iter_mut().enumerate() {
            *p = if i == 0 { 0 } else { degrees[rng.random_range(0..4)] };
        }
        let n_sections = (seconds / SECTION_SECONDS).ceil() as usize + 1;
        Self {
            key_index: rng.random_range(0..12),
            tempo_factor: rng.random_range(0.8..1.25),
            progression,
            sections: (0..n_sections)
                .map(|_| rng.random_range(MIN_SECTION_LEVEL.ln()..0.0).exp())
                .collect(),
            register: rng.random_range(-1..=1),
            brightness: rng.random_range(0.0..1.0),
        }
    }

    /// Fixed arrangement used for role prototypes.
    pub fn neutral(seconds: f64) -> Self {
        Self {
            key_index: 0,
            tempo_factor: 1.0,
            progression: [0, 5, 7, 0],
            sections: vec![0.75; (seconds / SECTION_SECONDS).ceil() as usize + 1],
            register: 0,
            brightness: 0.5,
        }
    }

    pub fn beat(&self) -> f64 {
        0.5 / self.tempo_factor
    }

    fn root_hz(&self) -> f64 {
        110.0 * 2f64.powf(self.key_index as f64 / 12.0 + self.register as f64)
    }

    /// Partials re-weighted by `(m / m₀)^tilt`, tilt from −1.5 (dark) to
    /// +0.5 (bright), with one extra upper partial.
    fn timbre(&self, partials: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let tilt = 2.0 * self.brightness - 1.5;
        let m0 = partials[0].0;
        let (m_last, a_last) = partials[partials.len() - 1];
        partials
            .iter()
            .copied()
            .chain(std::iter::once((m_last + m0, 0.5 * a_last)))
            .map(|(m, a)| (m, a * (m / m0).powf(tilt)))
            .collect()
    }

    /// One-pole smoothing of drum noise; darker sets smooth more.
    fn noise_smoothing(&self) -> f64 {
        0.85 * (1.0 - self.brightness)
    }

    /// Chord tones (Hz, root octave) of the chord sounding at time `t`.
    fn chord(&self, t: f64) -> [f64; 3] {
        let bar = (t / (4.0 * self.beat())) as usize;
        let degree = self.progression[bar % 4];
        let minor = degree == 9;
        let third = if minor { 3.0 } else { 4.0 };
        let root = self.root_hz() * 2f64.powf(degree as f64 / 12.0);
        [root, root * 2f64.powf(third / 12.0), root * 2f64.powf(7.0 / 12.0)]
    }

    /// Smoothly interpolated section loudness at time `t`.
    pub fn envelope(&self, t: f64) -> f64 {
        let s = t / SECTION_SECONDS;
        let i = (s as usize).min(self.sections.len() - 1);
        let j = (i + 1).min(self.sections.len() - 1);
        let frac = ((s - i as f64) * SECTION_SECONDS - (SECTION_SECONDS - 0.5)).max(0.0) / 0.5;
        self.sections[i] + frac.min(1.0) * (self.sections[j] - self.sections[i])
    }
}

fn note(buf: &mut [f64], sr: f64, start: f64, freq: f64, partials: &[(f64, f64)], attack: f64, decay: f64, amp: f64) {
    let i0 = (start * sr) as usize;
    let i1 = (((start + 5.0 * decay + attack) * sr) as usize).min(buf.len());
    for (i, b) in buf.iter_mut().enumerate().take(i1).skip(i0) {
        let t = i as f64 / sr - start;
        let env = (t / attack).min(1.0) * (-(t - attack).max(0.0) / decay).exp();
        let s: f64 = partials
            .iter()
            .filter(|&&(m, _)| freq * m < 0.5 * sr)
            .map(|&(m, a)| a * (TAU * freq * m * t).sin())
            .sum();
        *b += amp * env * s;
    }
}

fn noise_burst(buf: &mut [f64], sr: f64, start: f64, decay: f64, amp: f64, smooth: f64, rng: &mut ChaCha8Rng) {
    let i0 = (start * sr) as usize;
    let i1 = (((start + 5.0 * decay) * sr) as usize).min(buf.len());
    let mut lp = 0.0;
    for (i, b) in buf.iter_mut().enumerate().take(i1).skip(i0) {
        let t = i as f64 / sr - start;
        lp = smooth * lp + (1.0 - smooth) * rng.random_range(-1.0..1.0);
        *b += amp * (-t / decay).exp() * lp;
    }
}

/// Renders one role over `seconds` at `sr` Hz, peak-normalised to `gain`.
pub fn render_role(role: Role, arr: &Arrangement, seconds: f64, sr: u32, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let srf = sr as f64;
    let n = (seconds * srf).round() as usize;
    let mut buf = vec![0.0; n];
    let beat = arr.beat();
    let beats = (seconds / beat).ceil() as usize;
    for k in 0..beats {
        let t = k as f64 * beat;
        let chord = arr.chord(t);
        match role {
            Role::Bass => note(
                &mut buf,
                srf,
                t,
                chord[0] / 2.0,
                &arr.timbre(&[(1.0, 1.0), (2.0, 0.3)]),
                0.01,
                0.12,
                1.0,
            ),
            Role::Guitar => {
                let partials = arr.timbre(&[(2.0, 1.0), (4.0, 0.5), (6.0, 0.33)]);
                for half in 0..2 {
                    let ts = t + half as f64 * beat / 2.0;
                    for (j, &f) in chord.iter().enumerate() {
                        note(&mut buf, srf, ts + 0.01 * j as f64, f, &partials, 0.005, 0.06, 0.35);
                    }
                }
            }
            Role::Piano => {
                let f = chord[k % 3] * 2.0;
                note(
                    &mut buf,
                    srf,
                    t,
                    f,
                    &arr.timbre(&[(1.0, 1.0), (2.0, 0.5), (3.0, 0.25)]),
                    0.005,
                    0.2,
                    1.0,
                );
            }
            Role::Drums => {
                let smooth = arr.noise_smoothing();
                if k % 2 == 0 {
                    note(&mut buf, srf, t, 55.0, &[(1.0, 1.0)], 0.002, 0.06, 1.0);
                } else {
                    noise_burst(&mut buf, srf, t, 0.04, 0.8, smooth, rng);
                }
                noise_burst(&mut buf, srf, t + beat / 2.0, 0.01, 0.3, 0.5 * smooth, rng);
            }
            Role::Vocal => {
                if (k / 8) % 2 == 0 {
                    let degree = MAJOR_SCALE[rng.random_range(0..7)];
                    let f = arr.root_hz() * 4.0 * 2f64.powf(degree as f64 / 12.0);
                    note(
                        &mut buf,
                        srf,
                        t,
                        f,
                        &arr.timbre(&[(1.0, 1.0), (2.0, 0.3)]),
                        0.05,
                        0.3,
                        0.8,
                    );
                }
            }
            Role::Other => {
                if k % 4 == 0 {
                    let partials = arr.timbre(&[(1.0, 1.0)]);
                    for &f in &chord {
                        note(&mut buf, srf, t, f * 4.0, &partials, 0.4, 0.6, 0.3);
                    }
                }
            }
        }
    }
    for (i, b) in buf.iter_mut().enumerate() {
        *b *= arr.envelope(i as f64 / srf);
    }
    let peak = buf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = gain / peak;
        buf.iter_mut().for_each(|v| *v *= g);
    }
    buf
}

fn to_buffer<T: Scalar>(samples: &[f64], sr: u32) -> AudioBuffer<T> {
    AudioBuffer {
        samples: samples.iter().map(|&v| T::lit(v.clamp(-1.0, 1.0))).collect(),
        sample_rate: sr,
    }
}

/// Deterministic in `(spec.seed, index)`. Three to six tracks with distinct
/// roles, at most one vocal.
pub fn generate_trackset<T: Scalar>(spec: &DatasetSpec, index: u64) -> Result<TrackSet<T>> {
    if index >= spec.n_tracksets {
        return Err(Error::InvalidArgument(format!(
            "trackset index {index} >= {}",
            spec.n_tracksets
        )));
    }
    let mut rng = stream_rng(spec.seed, index);
    let arr = Arrangement::random(&mut rng, spec.track_len);
    let vocal = rng.random_bool(0.5);
    let mut others = [Role::Bass, Role::Guitar, Role::Piano, Role::Drums, Role::Other];
    others.shuffle(&mut rng);
    let n_other = rng.random_range(3 - vocal as usize..=5);
    let mut roles: Vec<Role> = others[..n_other].to_vec();
    if vocal {
        roles.push(Role::Vocal);
    }
    roles.sort();
    let tracks = roles
        .into_iter()
        .map(|role| {
            let gain = rng.random_range(0.5..0.95);
            let samples = render_role(role, &arr, spec.track_len, spec.toy_sample_rate, gain, &mut rng);
            Track {
                role,
                signal: to_buffer(&samples, spec.toy_sample_rate),
            }
        })
        .collect();
    Ok(TrackSet {
        tracks,
        tempo_factor: arr.tempo_factor,
        key_index: arr.key_index,
    })
}

/// Canonical rendering of a role (key 0, tempo 1, constant loudness).
pub fn role_prototype<T: Scalar>(role: Role, seconds: f64, sr: u32, seed: u64) -> AudioBuffer<T> {
    let mut rng = stream_rng(seed, role.index() as u64);
    let samples = render_role(role, &Arrangement::neutral(seconds), seconds, sr, 0.8, &mut rng);
    to_buffer(&samples, sr)
}
