//! `key = value` experiment configuration with a fixed key set.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::codec::{CodecConfig, ConsistencyTrainConfig, SAMPLE_RATE};
use crate::diffusion::{DenoiserConfig, Integrator, LdmTrainConfig};
use crate::error::{Error, Result};
use crate::synthdata::DatasetSpec;

/// Every accepted key with its default value.
const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "results"),
    ("threads", "0"),
    ("data.tracksets", "2000"),
    ("data.window_len", "10"),
    ("data.hop_len", "3"),
    ("data.track_len", "37"),
    ("data.heldout_fraction", "0.15"),
    ("codec.train_tracksets", "64"),
    ("codec.steps", "2000"),
    ("codec.batch", "4"),
    ("codec.clip_frames", "1"),
    ("codec.lr", "0.002"),
    ("codec.teacher_momentum", "0.95"),
    ("ldm.width", "64"),
    ("ldm.steps", "30000"),
    ("ldm.batch", "16"),
    ("ldm.lr", "0.0001"),
    ("ldm.min_lr", "0.000001"),
    ("ldm.warmup", "500"),
    ("ldm.plateau_patience", "5"),
    ("ldm.plateau_window", "200"),
    ("ldm.weight_decay", "0.01"),
    ("ldm.ema", "0.9999"),
    ("ldm.p_drop_context", "0.5"),
    ("ldm.p_drop_style", "0.5"),
    ("sample.mode", "full"),
    ("sample.steps", "30"),
    ("sample.cfg_context", "1.25"),
    ("sample.cfg_style", "1.25"),
    ("sample.stereo_width", "0.4"),
    ("sample.stochasticity", "1"),
    ("sample.integrator", "heun"),
    ("sample.mask", "none"),
    ("sample.mask_frames", ""),
    ("sample.keep_frames", "5"),
    ("sample.renoise", "80"),
    ("sample.loop_frames", "2"),
    ("eval.batch_size", "200"),
    ("eval.reference_size", "2000"),
    ("eval.embedder_seed", "0"),
    ("sweep.steps", "2,5,10,30"),
    ("sweep.cfg", "1,1.25,2"),
    ("sweep.modes", "full,style-only,context-only,text-context,uncond"),
    (
        "sweep.fig2_modes",
        "full,text-context,context-only,style-only,uncond,text-only",
    ),
    ("sweep.seeds", "5"),
    ("table1.configs", "30:1.25,10:1"),
];

/// Keys that steer where and how fast a run executes but never what it
/// computes; they are left out of the echo and the hash.
const RUNTIME_KEYS: &[&str] = &["out", "threads"];

/// Conditioning mode of a generation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    /// Audio-derived style and context.
    Full,
    /// Description-derived style and context.
    TextContext,
    ContextOnly,
    /// Audio-derived style only.
    StyleOnly,
    /// Description-derived style only.
    TextOnly,
    Uncond,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Full,
        Mode::TextContext,
        Mode::ContextOnly,
        Mode::StyleOnly,
        Mode::TextOnly,
        Mode::Uncond,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::TextContext => "text-context",
            Mode::ContextOnly => "context-only",
            Mode::StyleOnly => "style-only",
            Mode::TextOnly => "text-only",
            Mode::Uncond => "uncond",
        }
    }

    /// Legend label in the style of the published figure.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Full => "CLAP_A + Context",
            Mode::TextContext => "CLAP_T + Context",
            Mode::ContextOnly => "Context only",
            Mode::StyleOnly => "CLAP_A only",
            Mode::TextOnly => "CLAP_T only",
            Mode::Uncond => "No Cond.",
        }
    }

    pub fn uses_context(self) -> bool {
        matches!(self, Mode::Full | Mode::TextContext | Mode::ContextOnly)
    }

    pub fn uses_style(self) -> bool {
        matches!(self, Mode::Full | Mode::TextContext | Mode::StyleOnly | Mode::TextOnly)
    }

    pub fn uses_text(self) -> bool {
        matches!(self, Mode::TextContext | Mode::TextOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Mask controls for the `sample` command.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskChoice {
    None,
    /// Generate the listed frames, keep the rest from the reference.
    Inpaint(Vec<usize>),
    /// Keep this many leading frames, generate the rest.
    Outpaint(usize),
    Variation(f64),
    Loop(usize),
}

/// Per-run sampling settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSettings {
    pub mode: Mode,
    pub steps: usize,
    pub cfg_context: f64,
    pub cfg_style: f64,
    pub stereo_width: f64,
    pub stochasticity: f64,
    pub integrator: Integrator,
    pub mask: MaskChoice,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub dataset: DatasetSpec,
    pub heldout_fraction: f64,
    pub codec_train_tracksets: u64,
    pub codec_steps: u64,
    pub codec_batch: usize,
    pub codec_clip_frames: usize,
    pub codec_train: ConsistencyTrainConfig,
    pub ldm_width: usize,
    pub ldm_steps: u64,
    pub ldm_batch: usize,
    pub ldm_train: LdmTrainConfig,
    pub sample: SampleSettings,
    pub eval_batch_size: usize,
    pub eval_reference_size: usize,
    pub embedder_seed: u64,
    pub sweep_steps: Vec<usize>,
    pub sweep_cfg: Vec<f64>,
    pub sweep_modes: Vec<Mode>,
    pub fig2_modes: Vec<Mode>,
    pub sweep_seeds: u64,
    pub table1_configs: Vec<(usize, f64)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_values(BTreeMap::new()).expect("defaults are valid")
    }
}

fn parse<V: FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{raw}`")))
}

fn parse_list<V: FromStr>(key: &str, raw: &str) -> Result<Vec<V>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_modes(key: &str, raw: &str) -> Result<Vec<Mode>> {
    let modes: Vec<Mode> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Mode::from_str)
        .collect::<Result<_>>()?;
    if modes.is_empty() {
        return Err(Error::Config(format!("`{key}` lists no modes")));
    }
    Ok(modes)
}

/// Frame list such as `2-4,7` (inclusive ranges).
pub fn parse_frame_ranges(raw: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (parse("frame range", a)?, parse("frame range", b)?);
                if a > b {
                    return Err(Error::Config(format!("empty frame range `{part}`")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse("frame range", part)?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown and
    /// repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !KEYS.iter().any(|(key, _)| *key == k) {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", n + 1)));
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: repeated key `{k}`", n + 1)));
            }
        }
        Self::from_values(values)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::Config(format!("cannot read {}: {e}", path.display())),
        })?;
        Self::parse(&text)
    }

    /// Returns a copy with `key` replaced, re-validating everything.
    pub fn with(&self, key: &str, value: impl ToString) -> Result<Self> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        let mut values = self.values.clone();
        values.insert(key.to_string(), value.to_string());
        Self::from_values(values)
    }

    fn from_values(mut values: BTreeMap<String, String>) -> Result<Self> {
        for (k, d) in KEYS {
            values.entry(k.to_string()).or_insert_with(|| d.to_string());
        }
        let g = |k: &str| values[k].as_str();
        let dataset = DatasetSpec {
            n_tracksets: parse("data.tracksets", g("data.tracksets"))?,
            window_len: parse("data.window_len", g("data.window_len"))?,
            hop_len: parse("data.hop_len", g("data.hop_len"))?,
            seed: parse("seed", g("seed"))?,
            toy_sample_rate: SAMPLE_RATE,
            track_len: parse("data.track_len", g("data.track_len"))?,
        };
        dataset.validate()?;
        let heldout_fraction: f64 = parse("data.heldout_fraction", g("data.heldout_fraction"))?;
        if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
            return Err(Error::Config("data.heldout_fraction must lie in (0, 1)".into()));
        }
        let codec_train = ConsistencyTrainConfig {
            lr: parse("codec.lr", g("codec.lr"))?,
            ema_teacher_momentum: parse("codec.teacher_momentum", g("codec.teacher_momentum"))?,
            ..Default::default()
        };
        let ldm_train = LdmTrainConfig {
            base_lr: parse("ldm.lr", g("ldm.lr"))?,
            min_lr: parse("ldm.min_lr", g("ldm.min_lr"))?,
            warmup_steps: parse("ldm.warmup", g("ldm.warmup"))?,
            plateau_patience: parse("ldm.plateau_patience", g("ldm.plateau_patience"))?,
            plateau_window: parse("ldm.plateau_window", g("ldm.plateau_window"))?,
            weight_decay: parse("ldm.weight_decay", g("ldm.weight_decay"))?,
            ema_momentum: parse("ldm.ema", g("ldm.ema"))?,
            p_drop_context: parse("ldm.p_drop_context", g("ldm.p_drop_context"))?,
            p_drop_style: parse("ldm.p_drop_style", g("ldm.p_drop_style"))?,
            ..Default::default()
        };
        ldm_train.validate()?;
        let mask = match g("sample.mask") {
            "none" => MaskChoice::None,
            "inpaint" => MaskChoice::Inpaint(parse_frame_ranges(g("sample.mask_frames"))?),
            "outpaint" => MaskChoice::Outpaint(parse("sample.keep_frames", g("sample.keep_frames"))?),
            "variation" => MaskChoice::Variation(parse("sample.renoise", g("sample.renoise"))?),
            "loop" => MaskChoice::Loop(parse("sample.loop_frames", g("sample.loop_frames"))?),
            other => return Err(Error::Config(format!("unknown sample.mask `{other}`"))),
        };
        let integrator = match g("sample.integrator") {
            "heun" => Integrator::Heun,
            "euler" => Integrator::Euler,
            other => return Err(Error::Config(format!("unknown sample.integrator `{other}`"))),
        };
        let sample = SampleSettings {
            mode: g("sample.mode").parse()?,
            steps: parse("sample.steps", g("sample.steps"))?,
            cfg_context: parse("sample.cfg_context", g("sample.cfg_context"))?,
            cfg_style: parse("sample.cfg_style", g("sample.cfg_style"))?,
            stereo_width: parse("sample.stereo_width", g("sample.stereo_width"))?,
            stochasticity: parse("sample.stochasticity", g("sample.stochasticity"))?,
            integrator,
            mask,
        };
        let table1_configs = g("table1.configs")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                let (t, c) = s
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("table1.configs entry `{s}` is not `T:cfg`")))?;
                Ok((parse("table1.configs", t)?, parse("table1.configs", c)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            seed: dataset.seed,
            out: PathBuf::from(g("out")),
            threads: parse("threads", g("threads"))?,
            heldout_fraction,
            codec_train_tracksets: parse("codec.train_tracksets", g("codec.train_tracksets"))?,
            codec_steps: parse("codec.steps", g("codec.steps"))?,
            codec_batch: parse("codec.batch", g("codec.batch"))?,
            codec_clip_frames: parse("codec.clip_frames", g("codec.clip_frames"))?,
            codec_train,
            ldm_width: parse("ldm.width", g("ldm.width"))?,
            ldm_steps: parse("ldm.steps", g("ldm.steps"))?,
            ldm_batch: parse("ldm.batch", g("ldm.batch"))?,
            ldm_train,
            sample,
            eval_batch_size: parse("eval.batch_size", g("eval.batch_size"))?,
            eval_reference_size: parse("eval.reference_size", g("eval.reference_size"))?,
            embedder_seed: parse("eval.embedder_seed", g("eval.embedder_seed"))?,
            sweep_steps: parse_list("sweep.steps", g("sweep.steps"))?,
            sweep_cfg: parse_list("sweep.cfg", g("sweep.cfg"))?,
            sweep_modes: parse_modes("sweep.modes", g("sweep.modes"))?,
            fig2_modes: parse_modes("sweep.fig2_modes", g("sweep.fig2_modes"))?,
            sweep_seeds: parse("sweep.seeds", g("sweep.seeds"))?,
            table1_configs,
            dataset,
            values,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.codec_batch == 0 || self.codec_clip_frames == 0 || self.codec_train_tracksets == 0 {
            return bad("codec batch, clip length and training sets must be positive");
        }
        if self.ldm_batch == 0 || self.ldm_width == 0 || !self.ldm_width.is_multiple_of(8) {
            return bad("ldm.batch must be positive and ldm.width a positive multiple of 8");
        }
        if self.sample.steps == 0 || self.sweep_steps.contains(&0) || self.table1_configs.iter().any(|c| c.0 == 0) {
            return bad("step counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.sample.stereo_width) || !(0.0..=1.0).contains(&self.sample.stochasticity) {
            return bad("sample.stereo_width and sample.stochasticity must lie in [0, 1]");
        }
        let cfgs = [self.sample.cfg_context, self.sample.cfg_style];
        if cfgs
            .iter()
            .chain(&self.sweep_cfg)
            .chain(self.table1_configs.iter().map(|c| &c.1))
            .any(|c| !(*c >= 0.0))
        {
            return bad("guidance strengths must be non-negative");
        }
        if self.eval_batch_size < 2 || self.eval_reference_size < 2 {
            return bad("eval.batch_size and eval.reference_size must be at least 2");
        }
        if self.sweep_seeds == 0 || self.sweep_steps.is_empty() || self.sweep_cfg.is_empty() {
            return bad("sweep grid is empty");
        }
        Ok(())
    }

    /// Number of generated items per evaluation: five batches.
    pub fn eval_count(&self) -> usize {
        crate::metrics::BATCHES * self.eval_batch_size
    }

    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig::default()
    }

    pub fn denoiser_config(&self, sigma_data: f64) -> DenoiserConfig {
        DenoiserConfig {
            width: self.ldm_width,
            sigma_data,
            ..Default::default()
        }
    }

    /// Tracksets `0..n_train` feed training; the rest are held out.
    pub fn n_train_tracksets(&self) -> u64 {
        let n = self.dataset.n_tracksets;
        let held = ((n as f64) * self.heldout_fraction).round() as u64;
        n - held.clamp(1, n.saturating_sub(1).max(1))
    }

    /// All keys that shape results, sorted, one `key = value` per line.
    pub fn echo(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| !RUNTIME_KEYS.contains(&k.as_str()))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`ExperimentConfig::echo`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.echo().as_bytes()))
    }

    /// Raw value of a key after defaults are applied.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}
