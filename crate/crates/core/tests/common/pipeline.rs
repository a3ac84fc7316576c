//! End-to-end pipeline driver over the harness commands.

use std::path::Path;

use accomp_core::harness::*;
use accomp_core::Result;

/// A configuration small enough to run every command in seconds.
pub fn tiny_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "seed = {seed}
data.tracksets = 32
data.track_len = 16
data.heldout_fraction = 0.5
codec.train_tracksets = 2
codec.steps = 10
ldm.width = 8
ldm.steps = 20
ldm.batch = 4
ldm.warmup = 5
ldm.ema = 0.9
eval.batch_size = 6
eval.reference_size = 12
sample.steps = 3
sample.stereo_width = 0.4
sweep.steps = 2,3
sweep.cfg = 1,1.5
sweep.modes = full,uncond
sweep.fig2_modes = full,context-only
sweep.seeds = 2
table1.configs = 3:1.25
"
    ))
    .unwrap()
}

pub const OUTPUTS: [&str; 14] = [
    "codec.darf",
    "corpus.darc",
    "ldm.darf",
    "ldm_train.csv",
    "samples.darf",
    "eval.json",
    "sweep.csv",
    "fig2_sweep.csv",
    "sweep_summary.md",
    "table1.json",
    "table1.csv",
    "table1.md",
    "fig2.csv",
    "report.md",
];

/// Runs every pipeline command into `dir` in dependency order.
pub fn run_pipeline(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let art = Artifacts::new(dir);
    art.ensure_dir()?;
    cmd_train_codec(cfg, &art.codec())?;
    cmd_datagen(cfg, &art.codec(), &art.corpus())?;
    cmd_train_ldm(cfg, &art.corpus(), &art.ldm(), &art.ldm_log())?;
    let (codec, corpus, ckpt) = (art.codec(), art.corpus(), art.ldm());
    let inputs = Inputs {
        ckpt: &ckpt,
        corpus: &corpus,
        codec: &codec,
        force: false,
    };
    cmd_sample(cfg, &inputs, &art.samples())?;
    cmd_eval(cfg, &art.samples(), &corpus, &codec, &art.eval(), false)?;
    cmd_sweep(cfg, &inputs, &art)?;
    cmd_table1(cfg, &inputs, &art)?;
    cmd_report(cfg, &art)?;
    Ok(())
}

/// Names of outputs whose bytes differ between two run directories.
pub fn differing_outputs(a: &Path, b: &Path) -> Vec<String> {
    OUTPUTS
        .iter()
        .filter(|name| std::fs::read(a.join(name)).ok() != std::fs::read(b.join(name)).ok() || !a.join(name).exists())
        .map(|s| s.to_string())
        .collect()
}
