//! Windowing and context/accompaniment pairing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthdata::{AudioBuffer, DatasetSpec, Role, TrackSet};

/// Sample range `start..start + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentBounds {
    pub start: usize,
    pub len: usize,
}

impl SegmentBounds {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Windows of `window_len` every `hop_len` over `len` samples; a trailing
/// partial window is dropped.
pub fn window_bounds(len: usize, spec: &DatasetSpec) -> Vec<SegmentBounds> {
    let (w, h) = (spec.window_samples(), spec.hop_samples());
    if len < w {
        return Vec::new();
    }
    (0..=(len - w) / h)
        .map(|i| SegmentBounds { start: i * h, len: w })
        .collect()
}

pub fn window_segments<T>(t: &TrackSet<T>, spec: &DatasetSpec) -> Vec<SegmentBounds> {
    window_bounds(t.len_samples(), spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextAccompanimentPair<T> {
    pub context: AudioBuffer<T>,
    pub accompaniment: AudioBuffer<T>,
    /// Style sub-segment, relative to the start of `accompaniment`.
    pub style_source: SegmentBounds,
    pub segment: SegmentBounds,
    /// Index of the target track within the trackset.
    pub target: usize,
    pub target_role: Role,
    /// Bit `i` set when track `i` is mixed into the context.
    pub context_mask: u8,
}

impl<T: Scalar> ContextAccompanimentPair<T> {
    pub fn style_audio(&self) -> AudioBuffer<T> {
        self.accompaniment.slice(self.style_source.start, self.style_source.len)
    }
}

/// Style sub-segment length: half the window, rounded down to whole codec
/// frames.
pub fn style_len(window: usize) -> usize {
    let hop = crate::codec::HOP;
    ((window / 2) / hop).max(1) * hop
}

/// Draws a non-vocal target uniformly and mixes a uniformly random non-empty
/// subset of the remaining tracks into the context (peak ≤ 1).
pub fn make_pair<T: Scalar, R: Rng + ?Sized>(
    t: &TrackSet<T>,
    segment: SegmentBounds,
    rng: &mut R,
) -> Result<ContextAccompanimentPair<T>> {
    if segment.end() > t.len_samples() || segment.len == 0 {
        return Err(Error::InvalidArgument(format!(
            "segment {}..{} outside track of {} samples",
            segment.start,
            segment.end(),
            t.len_samples()
        )));
    }
    let candidates: Vec<usize> = (0..t.tracks.len())
        .filter(|&i| t.tracks[i].role != Role::Vocal)
        .collect();
    if candidates.is_empty() {
        return Err(Error::UnsatisfiablePair);
    }
    let target = candidates[rng.random_range(0..candidates.len())];
    let rest: Vec<usize> = (0..t.tracks.len()).filter(|&i| i != target).collect();
    let mut mask = 0u8;
    if !rest.is_empty() {
        let full = (1u32 << rest.len()) - 1;
        let mut pick = 0;
        while pick == 0 {
            pick = rng.random_range(0..=full);
        }
        for (bit, &i) in rest.iter().enumerate() {
            if pick & (1 << bit) != 0 {
                mask |= 1 << i;
            }
        }
    }
    let sr = t.tracks[0].signal.sample_rate;
    let mut mix = vec![T::zero(); segment.len];
    for (i, track) in t.tracks.iter().enumerate() {
        if mask & (1 << i) != 0 {
            for (m, &s) in mix.iter_mut().zip(&track.signal.samples[segment.start..segment.end()]) {
                *m += s;
            }
        }
    }
    let peak = mix.iter().fold(T::zero(), |p, v| p.max(v.abs()));
    if peak > T::one() {
        mix.iter_mut().for_each(|v| *v /= peak);
        mix.iter_mut().for_each(|v| *v = v.max(-T::one()).min(T::one()));
    }
    let sub = style_len(segment.len).min(segment.len);
    let style_start = rng.random_range(0..=segment.len - sub);
    Ok(ContextAccompanimentPair {
        context: AudioBuffer {
            samples: mix,
            sample_rate: sr,
        },
        accompaniment: t.tracks[target].signal.slice(segment.start, segment.len),
        style_source: SegmentBounds {
            start: style_start,
            len: sub,
        },
        segment,
        target,
        target_role: t.tracks[target].role,
        context_mask: mask,
    })
}
