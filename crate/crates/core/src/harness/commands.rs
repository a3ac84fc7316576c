//! Entry points of the `sample`, `eval`, `sweep` and `table1` commands and
//! the process exit-code mapping.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::pipeline::{
    check_provenance, file_hash, generate, load_ldm, read_samples, write_samples, write_text, Artifacts, EvalData,
    Generated,
};
use crate::harness::sweep::{grid, run_grid, SweepResult};
use crate::harness::table1::{build_table1, Table1};
use crate::metrics::{MetricReport, MetricValue};
use crate::synthdata::Corpus;

/// 2 for configuration and provenance errors, 3 for numerical failures, 4
/// for missing artifacts, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Provenance(_) => 2,
        Error::NonFiniteLoss | Error::NonFiniteGradient(_) | Error::Numerical(_) => 3,
        Error::MissingArtifact(_) => 4,
        _ => 1,
    }
}

/// Input artifact paths shared by the generation commands.
#[derive(Debug, Clone)]
pub struct Inputs<'a> {
    pub ckpt: &'a Path,
    pub corpus: &'a Path,
    pub codec: &'a Path,
    /// Skip provenance checks.
    pub force: bool,
}

impl<'a> Inputs<'a> {
    fn load(&self, cfg: &ExperimentConfig) -> Result<(crate::diffusion::DenoiserModel<f32>, Corpus, EvalData)> {
        let model = load_ldm(self.ckpt, self.corpus, self.force)?;
        let corpus = Corpus::read(self.corpus)?;
        let eval = EvalData::new(cfg, &corpus, self.codec, self.force)?;
        Ok((model, corpus, eval))
    }
}

/// Generates one sequence per conditioning pair with the configured
/// settings and writes them to `out`.
pub fn cmd_sample(cfg: &ExperimentConfig, inputs: &Inputs<'_>, out: &Path) -> Result<Generated> {
    let (model, corpus, eval) = inputs.load(cfg)?;
    let g = generate(
        &model,
        &corpus,
        &eval.split.conditioning,
        &cfg.sample,
        &eval.embedder,
        cfg.seed,
    )?;
    write_samples(
        out,
        &g,
        &eval.split.conditioning,
        &cfg.sample,
        &[
            ("config_hash", cfg.hash()),
            ("corpus_hash", file_hash(inputs.corpus)?),
            ("ckpt_hash", file_hash(inputs.ckpt)?),
        ],
    )?;
    Ok(g)
}

#[derive(Serialize)]
struct Provenance<'a> {
    config_hash: String,
    config: String,
    corpus_hash: &'a str,
    mode: &'a str,
}

#[derive(Serialize)]
struct EvalFile<'a> {
    provenance: Provenance<'a>,
    metrics: &'a std::collections::BTreeMap<String, MetricValue>,
}

/// Evaluates a samples file against the corpus' held-out sets and writes
/// the JSON report.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    samples: &Path,
    corpus_path: &Path,
    codec: &Path,
    out: &Path,
    force: bool,
) -> Result<MetricReport> {
    let (latents, mode, corpus_hash) = read_samples(samples)?;
    check_provenance("samples", &corpus_hash, &file_hash(corpus_path)?, force)?;
    let corpus = Corpus::read(corpus_path)?;
    let eval = EvalData::new(cfg, &corpus, codec, force)?;
    if latents.dim(0) != eval.split.conditioning.len() {
        return Err(Error::Config(format!(
            "samples hold {} items, the evaluation split needs {}",
            latents.dim(0),
            eval.split.conditioning.len()
        )));
    }
    let emb = eval.embed_generated(&latents)?;
    let report = eval.evaluate(&emb, mode.uses_context(), mode.uses_text())?;
    let file = EvalFile {
        provenance: Provenance {
            config_hash: cfg.hash(),
            config: cfg.echo(),
            corpus_hash: &corpus_hash,
            mode: mode.name(),
        },
        metrics: &report.metrics,
    };
    write_text(out, &(serde_json::to_string_pretty(&file).expect("plain data") + "\n"))?;
    Ok(report)
}

/// Main grid and the guidance-free MMD²-against-T sub-sweep; writes both
/// CSVs and the ranked summary.
pub fn cmd_sweep(cfg: &ExperimentConfig, inputs: &Inputs<'_>, art: &Artifacts) -> Result<(SweepResult, SweepResult)> {
    let (model, corpus, eval) = inputs.load(cfg)?;
    let main = run_grid(
        cfg,
        &model,
        &corpus,
        &eval,
        &grid(cfg, &cfg.sweep_modes, &cfg.sweep_steps, &cfg.sweep_cfg),
    )?;
    let fig2 = run_grid(
        cfg,
        &model,
        &corpus,
        &eval,
        &grid(cfg, &cfg.fig2_modes, &cfg.sweep_steps, &[1.0]),
    )?;
    let h = cfg.hash();
    std::fs::write(art.sweep(), main.to_csv(&h)?).map_err(Error::io(art.sweep()))?;
    std::fs::write(art.fig2_sweep(), fig2.to_csv(&h)?).map_err(Error::io(art.fig2_sweep()))?;
    write_text(
        &art.sweep_summary(),
        &main.summary_markdown("Sweep ranking by median MMD²", &h),
    )?;
    Ok((main, fig2))
}

/// Builds the objective-metrics table and writes it as JSON, CSV and
/// markdown.
pub fn cmd_table1(cfg: &ExperimentConfig, inputs: &Inputs<'_>, art: &Artifacts) -> Result<Table1> {
    let (model, corpus, eval) = inputs.load(cfg)?;
    let t = build_table1(cfg, &model, &corpus, &eval, inputs.codec)?;
    write_text(&art.table1("json"), &t.to_json())?;
    std::fs::write(art.table1("csv"), t.to_csv()?).map_err(Error::io(art.table1("csv")))?;
    let md = format!("config hash: `{}`\n\n{}", t.config_hash, t.to_markdown());
    write_text(&art.table1("md"), &md)?;
    Ok(t)
}
