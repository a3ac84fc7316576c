//! `DARC` corpus of encoded context/accompaniment pairs.
//!
//! Layout (little-endian): magic `DARC`, `u32` version, `u64` record count,
//! the dataset spec echo, a `u16`-prefixed provenance string, then records:
//! trackset index, segment and style bounds (`u64` each), target track, role
//! and context mask (`u8` each), then context latents, accompaniment latents
//! and the style embedding as DARF tensor payloads.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::codec::{CodecModel, LatentSequence};
use crate::error::{Error, Result};
use crate::metrics::Embedder;
use crate::nnkit::checkpoint::{encode_payload, Reader};
use crate::nnkit::Tensor;
use crate::rngs::stream_rng;
use crate::scalar::Scalar;
use crate::synthdata::{generate_trackset, make_pair, window_segments, DatasetSpec, Role, SegmentBounds};

pub const MAGIC: &[u8; 4] = b"DARC";
pub const VERSION: u32 = 1;
/// Stream offset separating pair draws from trackset synthesis.
const PAIR_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub trackset: u64,
    pub segment: SegmentBounds,
    pub style_source: SegmentBounds,
    pub target_track: u8,
    pub target_role: Role,
    pub context_mask: u8,
    pub context: LatentSequence<f32>,
    pub accompaniment: LatentSequence<f32>,
    pub style: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: DatasetSpec,
    pub provenance: String,
    pub records: Vec<PairRecord>,
}

/// Generates every trackset, windows it, draws one pair per window and
/// encodes it. Tracksets are processed in parallel; record order is by
/// trackset index, then window.
pub fn build_corpus<T: Scalar>(
    spec: &DatasetSpec,
    codec: &CodecModel<T>,
    embedder: &Embedder,
    provenance: &str,
) -> Result<Corpus> {
    spec.validate()?;
    let per_set: Vec<Result<Vec<PairRecord>>> = (0..spec.n_tracksets)
        .into_par_iter()
        .map(|index| trackset_records(spec, index, codec, embedder))
        .collect();
    let mut records = Vec::new();
    for r in per_set {
        records.extend(r?);
    }
    Ok(Corpus {
        spec: spec.clone(),
        provenance: provenance.to_string(),
        records,
    })
}

fn trackset_records<T: Scalar>(
    spec: &DatasetSpec,
    index: u64,
    codec: &CodecModel<T>,
    embedder: &Embedder,
) -> Result<Vec<PairRecord>> {
    let ts = generate_trackset::<T>(spec, index)?;
    let mut rng = stream_rng(spec.seed, PAIR_STREAM + index);
    let mut out = Vec::new();
    for segment in window_segments(&ts, spec) {
        let pair = make_pair(&ts, segment, &mut rng)?;
        let latents = codec.encode_batch(&[pair.context.clone(), pair.accompaniment.clone()])?;
        let style = embedder.embed_latent(&codec.encode(&pair.style_audio())?);
        out.push(PairRecord {
            trackset: index,
            segment,
            style_source: pair.style_source,
            target_track: pair.target as u8,
            target_role: pair.target_role,
            context_mask: pair.context_mask,
            context: latents[0].cast(),
            accompaniment: latents[1].cast(),
            style: style.iter().map(|&v| v as f32).collect(),
        });
    }
    Ok(out)
}

fn encode_spec(out: &mut Vec<u8>, spec: &DatasetSpec) {
    out.extend_from_slice(&spec.n_tracksets.to_le_bytes());
    out.extend_from_slice(&spec.window_len.to_le_bytes());
    out.extend_from_slice(&spec.hop_len.to_le_bytes());
    out.extend_from_slice(&spec.seed.to_le_bytes());
    out.extend_from_slice(&spec.toy_sample_rate.to_le_bytes());
    out.extend_from_slice(&spec.track_len.to_le_bytes());
}

fn decode_spec(r: &mut Reader<'_>) -> std::result::Result<DatasetSpec, String> {
    Ok(DatasetSpec {
        n_tracksets: r.u64()?,
        window_len: r.f64()?,
        hop_len: r.f64()?,
        seed: r.u64()?,
        toy_sample_rate: r.u32()?,
        track_len: r.f64()?,
    })
}

impl Corpus {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        encode_spec(&mut out, &self.spec);
        let p = self.provenance.as_bytes();
        out.extend_from_slice(&(p.len() as u16).to_le_bytes());
        out.extend_from_slice(p);
        for r in &self.records {
            for v in [
                r.trackset,
                r.segment.start as u64,
                r.segment.len as u64,
                r.style_source.start as u64,
                r.style_source.len as u64,
            ] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&[r.target_track, r.target_role.index() as u8, r.context_mask]);
            encode_payload(&mut out, r.context.values());
            encode_payload(&mut out, r.accompaniment.values());
            encode_payload(
                &mut out,
                &Tensor::new(vec![r.style.len()], r.style.clone()).expect("1-d"),
            );
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let count = r.u64()?;
        let spec = decode_spec(&mut r)?;
        let plen = r.u16()? as usize;
        let provenance = String::from_utf8(r.take(plen)?.to_vec()).map_err(|e| e.to_string())?;
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let trackset = r.u64()?;
            let segment = SegmentBounds {
                start: r.u64()? as usize,
                len: r.u64()? as usize,
            };
            let style_source = SegmentBounds {
                start: r.u64()? as usize,
                len: r.u64()? as usize,
            };
            let target_track = r.u8()?;
            let target_role = Role::from_index(r.u8()? as usize).ok_or("bad role")?;
            let context_mask = r.u8()?;
            let latent = |r: &mut Reader<'_>| -> std::result::Result<LatentSequence<f32>, String> {
                LatentSequence::new(r.payload::<f32>()?).map_err(|e| e.to_string())
            };
            let context = latent(&mut r)?;
            let accompaniment = latent(&mut r)?;
            let style = r.payload::<f32>()?.into_data();
            records.push(PairRecord {
                trackset,
                segment,
                style_source,
                target_track,
                target_role,
                context_mask,
                context,
                accompaniment,
                style,
            });
        }
        if !r.at_end() {
            return Err("trailing bytes after last record".into());
        }
        Ok(Self {
            spec,
            provenance,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(Error::io(path))?;
        f.write_all(&self.to_bytes()).map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(Error::io(path))?;
        Self::from_bytes(&buf).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}
