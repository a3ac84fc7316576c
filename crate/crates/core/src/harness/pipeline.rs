//! Pipeline stages: codec training, corpus generation, denoiser training,
//! conditional generation and embedding of evaluation sets.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::codec::{CodecModel, CodecTrainer, LatentSequence, HOP, LATENT_CHANNELS, SAMPLE_RATE};
use crate::diffusion::{
    build_schedule, masked_sample, pseudo_stereo_sample, ConditioningBundle, DenoiserModel, LdmTrainer, MaskSpec,
    SamplerConfig, TrainBatch,
};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, MaskChoice, Mode, SampleSettings};
use crate::metrics::{evaluate, Embedder, EvalInputs, MetricReport};
use crate::nnkit::checkpoint::{find_text, meta_text, read_tensors, write_tensors};
use crate::nnkit::Tensor;
use crate::rngs::stream_rng;
use crate::synthdata::{build_corpus, generate_trackset, AudioBuffer, Corpus, DatasetSpec, TrackSet};

/// RNG stream offsets of the pipeline stages.
const CODEC_STREAM: u64 = 2 << 40;
const LDM_STREAM: u64 = 3 << 40;
const SPLIT_STREAM: u64 = 4 << 40;
const NOISE_STREAM: u64 = 5 << 40;
/// Items per parallel sampling chunk.
const SAMPLE_CHUNK: usize = 25;

/// Standard artifact names inside an output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn codec(&self) -> PathBuf {
        self.dir.join("codec.darf")
    }

    pub fn corpus(&self) -> PathBuf {
        self.dir.join("corpus.darc")
    }

    pub fn ldm(&self) -> PathBuf {
        self.dir.join("ldm.darf")
    }

    pub fn ldm_log(&self) -> PathBuf {
        self.dir.join("ldm_train.csv")
    }

    pub fn samples(&self) -> PathBuf {
        self.dir.join("samples.darf")
    }

    pub fn eval(&self) -> PathBuf {
        self.dir.join("eval.json")
    }

    pub fn sweep(&self) -> PathBuf {
        self.dir.join("sweep.csv")
    }

    pub fn sweep_summary(&self) -> PathBuf {
        self.dir.join("sweep_summary.md")
    }

    pub fn fig2_sweep(&self) -> PathBuf {
        self.dir.join("fig2_sweep.csv")
    }

    pub fn table1(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("table1.{ext}"))
    }

    pub fn fig2(&self) -> PathBuf {
        self.dir.join("fig2.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.md")
    }

    pub fn ensure_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(Error::io(&self.dir))
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::io(path))
}

/// Fails with a provenance error unless `recorded == actual` or `force`.
pub fn check_provenance(what: &str, recorded: &str, actual: &str, force: bool) -> Result<()> {
    if force || recorded == actual {
        Ok(())
    } else {
        Err(Error::Provenance(format!(
            "{what}: artifact was built from {recorded}, found {actual}"
        )))
    }
}

fn provenance_field<'a>(provenance: &'a str, key: &str) -> Option<&'a str> {
    provenance
        .split(';')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecTrainSummary {
    pub steps: u64,
    pub skipped: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub boundary: f64,
}

/// Trains the codec on random clips of the first training tracksets.
pub fn train_codec(cfg: &ExperimentConfig) -> Result<(CodecModel<f32>, Vec<Tensor<f32>>, CodecTrainSummary)> {
    let n = cfg.codec_train_tracksets.min(cfg.n_train_tracksets());
    let sets: Vec<TrackSet<f32>> = (0..n)
        .into_par_iter()
        .map(|i| generate_trackset(&cfg.dataset, i))
        .collect::<Result<_>>()?;
    let clip_len = cfg.codec_clip_frames * HOP;
    let mut rng = stream_rng(cfg.seed, CODEC_STREAM);
    let clip = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<AudioBuffer<f32>> {
        let s = &sets[rng.random_range(0..sets.len())];
        let t = &s.tracks[rng.random_range(0..s.tracks.len())];
        let starts = (t.signal.len() - clip_len) / HOP + 1;
        Ok(t.signal.slice(rng.random_range(0..starts) * HOP, clip_len))
    };
    let fixed: Vec<AudioBuffer<f32>> = (0..16).map(|_| clip(&mut rng)).collect::<Result<_>>()?;
    let mut model = CodecModel::<f32>::new(cfg.codec_config(), &mut rng);
    let mut trainer = CodecTrainer::new(&model, cfg.codec_train.clone());
    let initial_loss = trainer.fixed_batch_loss(&model, &fixed, cfg.seed)? as f64;
    for _ in 0..cfg.codec_steps {
        let batch: Vec<_> = (0..cfg.codec_batch).map(|_| clip(&mut rng)).collect::<Result<_>>()?;
        match trainer.step(&mut model, &batch, &mut rng) {
            Ok(_) | Err(Error::NonFiniteLoss) => {}
            Err(e) => return Err(e),
        }
    }
    if cfg.codec_steps > 0 && trainer.skipped * 2 > cfg.codec_steps {
        return Err(Error::Numerical(format!(
            "codec training skipped {} of {} steps on non-finite losses",
            trainer.skipped, cfg.codec_steps
        )));
    }
    let summary = CodecTrainSummary {
        steps: trainer.steps,
        skipped: trainer.skipped,
        initial_loss,
        final_loss: trainer.fixed_batch_loss(&model, &fixed, cfg.seed)? as f64,
        boundary: model.boundary_check(8, cfg.seed)?,
    };
    Ok((model, trainer.teacher_shadow().to_vec(), summary))
}

pub fn cmd_train_codec(cfg: &ExperimentConfig, out: &Path) -> Result<CodecTrainSummary> {
    let (model, teacher, summary) = train_codec(cfg)?;
    model.save(out, Some(&teacher), vec![meta_text("config_hash", &cfg.hash())])?;
    Ok(summary)
}

pub fn load_codec(path: &Path) -> Result<CodecModel<f32>> {
    CodecModel::load(path).map(|(m, _)| m)
}

/// Builds and writes the pair corpus, recording the codec's file hash.
pub fn cmd_datagen(cfg: &ExperimentConfig, codec_path: &Path, out: &Path) -> Result<usize> {
    let codec = load_codec(codec_path)?;
    let embedder = Embedder::new(cfg.embedder_seed, &codec)?;
    let provenance = format!("config={};codec={}", cfg.hash(), file_hash(codec_path)?);
    let corpus = build_corpus(&cfg.dataset, &codec, &embedder, &provenance)?;
    corpus.write(out)?;
    Ok(corpus.records.len())
}

/// Training, conditioning and reference record indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub conditioning: Vec<usize>,
    pub reference: Vec<usize>,
}

/// Tracksets below the held-out boundary train the model. Held-out records
/// are shuffled once; the first `eval_count` condition generation and the
/// next `eval_reference_size` form the reference set.
pub fn split_corpus(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Split> {
    let boundary = cfg.n_train_tracksets();
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (i, r) in corpus.records.iter().enumerate() {
        if r.trackset < boundary {
            train.push(i);
        } else {
            held.push(i);
        }
    }
    held.shuffle(&mut stream_rng(cfg.seed, SPLIT_STREAM));
    let need = cfg.eval_count() + cfg.eval_reference_size;
    if held.len() < need || train.is_empty() {
        return Err(Error::Config(format!(
            "held-out split has {} pairs, evaluation needs {need}; raise data.tracksets or data.heldout_fraction",
            held.len()
        )));
    }
    let reference = held[cfg.eval_count()..need].to_vec();
    held.truncate(cfg.eval_count());
    Ok(Split {
        train,
        conditioning: held,
        reference,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdmTrainSummary {
    pub steps: u64,
    pub skipped: u64,
    pub sigma_data: f64,
    pub parameters: usize,
    pub context_null_rate: f64,
    pub style_null_rate: f64,
    pub joint_null_rate: f64,
    /// `(step, mean loss since the previous entry)`.
    pub log: Vec<(u64, f64)>,
}

fn stack_latents(seqs: &[&LatentSequence<f32>]) -> Result<Tensor<f32>> {
    let rows: Vec<Tensor<f32>> = seqs.iter().map(|s| s.values().clone()).collect();
    Tensor::stack(&rows)
}

fn style_tensor(rows: &[Vec<f32>]) -> Result<Tensor<f32>> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    Tensor::new(vec![rows.len(), d], rows.concat())
}

/// Standard deviation of the training accompaniment latents, rounded to
/// `f32` so an in-memory model equals its reloaded checkpoint.
fn latent_std(corpus: &Corpus, train: &[usize]) -> f64 {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for &i in train {
        for &v in corpus.records[i].accompaniment.values().data() {
            n += 1.0;
            s += v as f64;
            s2 += (v as f64) * (v as f64);
        }
    }
    let mean = s / n;
    ((s2 / n - mean * mean).max(1e-12).sqrt() as f32) as f64
}

/// Trains the denoiser on the training split and returns it with its EMA
/// shadow.
pub fn train_ldm(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
) -> Result<(DenoiserModel<f32>, Vec<Tensor<f32>>, LdmTrainSummary)> {
    let split = split_corpus(cfg, corpus)?;
    let sigma_data = latent_std(corpus, &split.train);
    let mut rng = stream_rng(cfg.seed, LDM_STREAM);
    let mut model = DenoiserModel::<f32>::new(cfg.denoiser_config(sigma_data), &mut rng);
    let mut trainer = LdmTrainer::new(&model, cfg.ldm_train.clone())?;
    let log_every = (cfg.ldm_steps / 100).max(1);
    let (mut log, mut acc, mut count) = (Vec::new(), 0.0, 0u64);
    for step in 0..cfg.ldm_steps {
        let picks: Vec<&crate::synthdata::PairRecord> = (0..cfg.ldm_batch)
            .map(|_| &corpus.records[split.train[rng.random_range(0..split.train.len())]])
            .collect();
        let batch = TrainBatch {
            target: stack_latents(&picks.iter().map(|r| &r.accompaniment).collect::<Vec<_>>())?,
            context: stack_latents(&picks.iter().map(|r| &r.context).collect::<Vec<_>>())?,
            style: style_tensor(&picks.iter().map(|r| r.style.clone()).collect::<Vec<_>>())?,
        };
        match trainer.step(&mut model, &batch, &mut rng) {
            Ok(loss) => {
                acc += loss as f64;
                count += 1;
            }
            Err(Error::NonFiniteLoss) => {}
            Err(e) => return Err(e),
        }
        if (step + 1) % log_every == 0 || step + 1 == cfg.ldm_steps {
            log.push((step + 1, if count > 0 { acc / count as f64 } else { f64::NAN }));
            acc = 0.0;
            count = 0;
        }
    }
    if cfg.ldm_steps > 0 && trainer.skipped * 2 > cfg.ldm_steps {
        return Err(Error::Numerical(format!(
            "denoiser training skipped {} of {} steps on non-finite losses",
            trainer.skipped, cfg.ldm_steps
        )));
    }
    let summary = LdmTrainSummary {
        steps: trainer.steps,
        skipped: trainer.skipped,
        sigma_data,
        parameters: model.num_parameters(),
        context_null_rate: trainer.dropout.context_rate(),
        style_null_rate: trainer.dropout.style_rate(),
        joint_null_rate: trainer.dropout.joint_rate(),
        log,
    };
    Ok((model, trainer.ema_shadow().to_vec(), summary))
}

/// Trains on the corpus file and writes the checkpoint (with the corpus
/// hash) and a loss log.
pub fn cmd_train_ldm(
    cfg: &ExperimentConfig,
    corpus_path: &Path,
    out: &Path,
    log_path: &Path,
) -> Result<LdmTrainSummary> {
    let corpus = Corpus::read(corpus_path)?;
    let (model, ema, summary) = train_ldm(cfg, &corpus)?;
    model.save(
        out,
        Some(&ema),
        vec![
            meta_text("config_hash", &cfg.hash()),
            meta_text("corpus_hash", &file_hash(corpus_path)?),
        ],
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss"]).map_err(csv_err(log_path))?;
    for (s, l) in &summary.log {
        w.write_record([s.to_string(), l.to_string()])
            .map_err(csv_err(log_path))?;
    }
    write_bytes(
        log_path,
        w.into_inner().map_err(|e| Error::Format {
            path: log_path.to_path_buf(),
            reason: e.to_string(),
        })?,
    )?;
    Ok(summary)
}

pub(crate) fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: Vec<u8>) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::io(path))
}

/// Loads the EMA denoiser and checks it was trained on `corpus_path`.
pub fn load_ldm(ckpt: &Path, corpus_path: &Path, force: bool) -> Result<DenoiserModel<f32>> {
    let records = read_tensors::<f32>(ckpt)?;
    let recorded = find_text(&records, "corpus_hash")?;
    check_provenance("denoiser checkpoint", &recorded, &file_hash(corpus_path)?, force)?;
    DenoiserModel::load(ckpt, true).map(|(m, _)| m)
}

/// Generated latents, one row per conditioning pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub left: Tensor<f32>,
    /// Present when the stereo width is positive.
    pub right: Option<Tensor<f32>>,
}

/// Conditioning for `items` under `mode`: context latents, audio-derived
/// style or description embeddings of the target role.
pub fn conditioning(
    corpus: &Corpus,
    items: &[usize],
    mode: Mode,
    embedder: &Embedder,
    cfg_context: f64,
    cfg_style: f64,
) -> Result<ConditioningBundle<f32>> {
    let context = if mode.uses_context() {
        Some(stack_latents(
            &items.iter().map(|&i| &corpus.records[i].context).collect::<Vec<_>>(),
        )?)
    } else {
        None
    };
    let style = if !mode.uses_style() {
        None
    } else if mode.uses_text() {
        let rows: Vec<Vec<f32>> = items
            .iter()
            .map(|&i| {
                embedder
                    .embed_descriptor(corpus.records[i].target_role)
                    .iter()
                    .map(|&v| v as f32)
                    .collect()
            })
            .collect();
        Some(style_tensor(&rows)?)
    } else {
        Some(style_tensor(
            &items
                .iter()
                .map(|&i| corpus.records[i].style.clone())
                .collect::<Vec<_>>(),
        )?)
    };
    Ok(ConditioningBundle::new(
        context,
        style,
        cfg_context as f32,
        cfg_style as f32,
    ))
}

fn sampler_config(settings: &SampleSettings, seed: u64, first_item: u64) -> Result<SamplerConfig<f32>> {
    let schedule = build_schedule(0.002f32, 80.0, settings.steps, 7.0)?;
    let mut c = SamplerConfig::new(schedule, seed);
    c.stochasticity = settings.stochasticity as f32;
    c.stereo_width = settings.stereo_width as f32;
    c.integrator = settings.integrator;
    c.first_item = first_item;
    c.validate()?;
    Ok(c)
}

fn mask_spec(choice: &MaskChoice, reference: &Tensor<f32>) -> Result<Option<MaskSpec<f32>>> {
    let frames = reference.dim(0);
    let check = |fs: &[usize]| -> Result<()> {
        match fs.iter().find(|&&f| f >= frames) {
            Some(f) => Err(Error::Config(format!("mask frame {f} outside 0..{frames}"))),
            None => Ok(()),
        }
    };
    Ok(match choice {
        MaskChoice::None => None,
        MaskChoice::Inpaint(fs) => {
            check(fs)?;
            Some(MaskSpec::inpaint(
                reference.clone(),
                (0..frames).map(|f| fs.contains(&f)).collect(),
            ))
        }
        MaskChoice::Outpaint(keep) => {
            if *keep > frames {
                return Err(Error::Config(format!("cannot keep {keep} of {frames} frames")));
            }
            Some(MaskSpec::outpaint(reference.clone(), *keep))
        }
        MaskChoice::Variation(s) => Some(MaskSpec::variation(reference.clone(), *s as f32)),
        MaskChoice::Loop(k) => Some(MaskSpec::looped(reference.clone(), *k).map_err(|e| Error::Config(e.to_string()))?),
    })
}

/// Generates one sequence per item of `items` (mask references are the
/// items' real accompaniments). Chunks run in parallel and draw from
/// per-item noise streams, so the result does not depend on the worker
/// count.
pub fn generate(
    model: &DenoiserModel<f32>,
    corpus: &Corpus,
    items: &[usize],
    settings: &SampleSettings,
    embedder: &Embedder,
    seed: u64,
) -> Result<Generated> {
    let frames = corpus.records[items[0]].accompaniment.frames();
    let bundle = conditioning(
        corpus,
        items,
        settings.mode,
        embedder,
        settings.cfg_context,
        settings.cfg_style,
    )?;
    let chunks: Vec<(usize, usize)> = (0..items.len())
        .step_by(SAMPLE_CHUNK)
        .map(|s| (s, SAMPLE_CHUNK.min(items.len() - s)))
        .collect();
    let parts: Vec<(Vec<Tensor<f32>>, Option<Vec<Tensor<f32>>>)> = chunks
        .par_iter()
        .map(|&(start, len)| -> Result<_> {
            let cond = bundle.slice(start, len);
            if settings.mask != MaskChoice::None {
                let mut rows = Vec::with_capacity(len);
                for j in 0..len {
                    let reference = corpus.records[items[start + j]].accompaniment.values();
                    let spec = mask_spec(&settings.mask, reference)?.expect("mask present");
                    let sc = sampler_config(settings, seed, (start + j) as u64)?;
                    let out = masked_sample(&cond.slice(j, 1), &sc, &spec, model, 1)?;
                    rows.extend(out.unstack());
                }
                return Ok((rows, None));
            }
            let sc = sampler_config(settings, seed, start as u64)?;
            let (l, r) = pseudo_stereo_sample(&cond, &sc, model, len, frames)?;
            let right = (settings.stereo_width > 0.0).then(|| r.unstack());
            Ok((l.unstack(), right))
        })
        .collect::<Result<_>>()?;
    let mut left = Vec::with_capacity(items.len());
    let mut right = Vec::new();
    for (l, r) in parts {
        left.extend(l);
        right.extend(r.unwrap_or_default());
    }
    if !left.iter().all(Tensor::is_finite) {
        return Err(Error::Numerical("generated latents contain non-finite values".into()));
    }
    Ok(Generated {
        left: Tensor::stack(&left)?,
        right: if right.is_empty() {
            None
        } else {
            Some(Tensor::stack(&right)?)
        },
    })
}

/// Embeddings of every evaluation set derived from the corpus.
pub struct EvalData {
    pub split: Split,
    pub embedder: Embedder,
    pub reference: Vec<Vec<f64>>,
    pub reference_contexts: Vec<Vec<f64>>,
    pub contexts: Vec<Vec<f64>>,
    pub real: Vec<Vec<f64>>,
    pub descriptors: Vec<Vec<f64>>,
    pub batch_size: usize,
}

impl EvalData {
    /// Checks the corpus was encoded by `codec_path`, then embeds the sets.
    pub fn new(cfg: &ExperimentConfig, corpus: &Corpus, codec_path: &Path, force: bool) -> Result<Self> {
        let recorded = provenance_field(&corpus.provenance, "codec").unwrap_or("");
        check_provenance("corpus", recorded, &file_hash(codec_path)?, force)?;
        let codec = load_codec(codec_path)?;
        let embedder = Embedder::new(cfg.embedder_seed, &codec)?;
        let split = split_corpus(cfg, corpus)?;
        let embed = |idx: &[usize], f: &dyn Fn(&crate::synthdata::PairRecord) -> &LatentSequence<f32>| {
            idx.iter()
                .map(|&i| embedder.embed_latent(f(&corpus.records[i])))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            reference: embed(&split.reference, &|r| &r.accompaniment),
            reference_contexts: embed(&split.reference, &|r| &r.context),
            contexts: embed(&split.conditioning, &|r| &r.context),
            real: embed(&split.conditioning, &|r| &r.accompaniment),
            descriptors: split
                .conditioning
                .iter()
                .map(|&i| embedder.embed_descriptor(corpus.records[i].target_role))
                .collect(),
            batch_size: cfg.eval_batch_size,
            embedder,
            split,
        })
    }

    /// Unit-norm embeddings of generated `[N, F, C]` latents.
    pub fn embed_generated(&self, latents: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        latents
            .unstack()
            .into_iter()
            .map(|z| LatentSequence::clamped(z).map(|s| self.embedder.embed_latent(&s)))
            .collect()
    }

    /// Five-batch metrics of `candidates`. Adherence needs context and the
    /// description score needs a description, so they are reported only
    /// when `with_context` / `with_text` hold.
    pub fn evaluate(&self, candidates: &[Vec<f64>], with_context: bool, with_text: bool) -> Result<MetricReport> {
        evaluate(&EvalInputs {
            reference: &self.reference,
            candidates,
            contexts: with_context.then_some(self.contexts.as_slice()),
            descriptors: with_text.then_some(self.descriptors.as_slice()),
            real_pairs: Some((&self.reference_contexts, &self.reference)),
            batch_size: self.batch_size,
        })
    }

    /// Embeddings of white-noise windows passed through the codec encoder.
    pub fn noise_embeddings(&self, cfg: &ExperimentConfig, codec_path: &Path) -> Result<Vec<Vec<f64>>> {
        let codec = load_codec(codec_path)?;
        let len = cfg.dataset.window_samples();
        let mut rng = stream_rng(cfg.seed, NOISE_STREAM);
        (0..self.real.len())
            .map(|_| {
                let samples = (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                let z = codec.encode(&AudioBuffer::new(samples, SAMPLE_RATE)?)?;
                Ok(self.embedder.embed_latent(&z))
            })
            .collect()
    }
}

/// Rotates every batch of `rows` by half its length, pairing each item with
/// another item of the same batch.
pub fn shuffled_within_batches(rows: &[Vec<f64>], batch: usize) -> Vec<Vec<f64>> {
    rows.chunks(batch)
        .flat_map(|c| {
            let mut c = c.to_vec();
            let k = c.len() / 2;
            c.rotate_left(k);
            c
        })
        .collect()
}

/// Writes generated latents with their provenance.
pub fn write_samples(
    path: &Path,
    generated: &Generated,
    items: &[usize],
    settings: &SampleSettings,
    hashes: &[(&str, String)],
) -> Result<()> {
    let idx = Tensor::new(vec![items.len()], items.iter().map(|&i| i as f32).collect())?;
    let mut records = vec![("left".to_string(), generated.left.clone()), ("items".to_string(), idx)];
    if let Some(r) = &generated.right {
        records.push(("right".to_string(), r.clone()));
    }
    records.push(meta_text("mode", settings.mode.name()));
    for (k, v) in hashes {
        records.push(meta_text(k, v));
    }
    write_tensors(path, &records)
}

/// Generated latents and the corpus hash recorded with them.
pub fn read_samples(path: &Path) -> Result<(Tensor<f32>, Mode, String)> {
    let records = read_tensors::<f32>(path)?;
    let left = records
        .iter()
        .find(|(n, _)| n == "left")
        .map(|(_, t)| t.clone())
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: "no `left` record".into(),
        })?;
    let mode = find_text(&records, "mode")?.parse()?;
    Ok((left, mode, find_text(&records, "corpus_hash")?))
}

pub fn latent_channels_ok(t: &Tensor<f32>) -> bool {
    t.rank() == 3 && t.dim(2) == LATENT_CHANNELS
}

/// Dataset spec echo used by reports.
pub fn dataset_line(spec: &DatasetSpec) -> String {
    format!(
        "{} tracksets, {} s windows, {} s hop, {} s tracks",
        spec.n_tracksets, spec.window_len, spec.hop_len, spec.track_len
    )
}
