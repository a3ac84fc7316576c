//! Procedural multi-track generator and context/accompaniment pairing.

pub mod audio;
pub mod corpus;
pub mod generate;
pub mod pairing;

pub use audio::AudioBuffer;
pub use corpus::{build_corpus, Corpus, PairRecord};
pub use generate::{generate_trackset, role_prototype, Arrangement, Role, Track, TrackSet};
pub use pairing::{make_pair, style_len, window_bounds, window_segments, ContextAccompanimentPair, SegmentBounds};

use crate::codec::{HOP, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Parameters of a synthetic corpus; the corpus is a pure function of it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_tracksets: u64,
    /// Window length in seconds.
    pub window_len: f64,
    /// Window hop in seconds.
    pub hop_len: f64,
    pub seed: u64,
    pub toy_sample_rate: u32,
    /// Track length in seconds.
    pub track_len: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_tracksets: 2000,
            window_len: 10.0,
            hop_len: 3.0,
            seed: 0,
            toy_sample_rate: SAMPLE_RATE,
            track_len: 37.0,
        }
    }
}

impl DatasetSpec {
    pub fn window_samples(&self) -> usize {
        (self.window_len * self.toy_sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_len * self.toy_sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_len > self.hop_len && self.hop_len > 0.0) {
            return Err(Error::Config(format!(
                "need window_len > hop_len > 0, got {} and {}",
                self.window_len, self.hop_len
            )));
        }
        if !self.window_samples().is_multiple_of(HOP) {
            return Err(Error::Config(format!(
                "window of {} samples is not a multiple of the codec hop {HOP}",
                self.window_samples()
            )));
        }
        if self.n_tracksets == 0 || self.track_len < self.window_len {
            return Err(Error::Config("corpus would be empty".into()));
        }
        Ok(())
    }

    /// Windows per trackset.
    pub fn windows_per_track(&self) -> usize {
        let len = (self.track_len * self.toy_sample_rate as f64).round() as usize;
        window_bounds(len, self).len()
    }
}
