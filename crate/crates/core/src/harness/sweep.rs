//! Grid sweeps over step count, guidance strength, conditioning mode and
//! seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;

use crate::diffusion::DenoiserModel;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, MaskChoice, Mode, SampleSettings};
use crate::harness::pipeline::{csv_err, generate, EvalData};
use crate::synthdata::Corpus;

/// Metric columns of sweep rows, in output order.
pub const METRIC_COLUMNS: [&str; 6] = ["mmd2", "fd", "density", "coverage", "adherence", "clap_score"];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: Mode,
    pub steps: usize,
    pub cfg_context: f64,
    pub cfg_style: f64,
    pub seed: u64,
    /// Five-batch means; metrics undefined for the mode are absent.
    pub metrics: BTreeMap<String, f64>,
}

impl SweepRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    fn key(&self) -> (Mode, usize, u64, u64, u64) {
        (
            self.mode,
            self.steps,
            self.cfg_context.to_bits(),
            self.cfg_style.to_bits(),
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// One requested evaluation: `cfg` sets both guidance strengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub mode: Mode,
    pub steps: usize,
    pub cfg: f64,
    pub seed: u64,
}

/// Sampling seed of the `index`-th sweep seed.
pub fn sweep_seed(cfg: &ExperimentConfig, index: u64) -> u64 {
    cfg.seed.wrapping_mul(1000).wrapping_add(index)
}

/// Full Cartesian grid in mode, steps, cfg, seed order.
pub fn grid(cfg: &ExperimentConfig, modes: &[Mode], steps: &[usize], cfgs: &[f64]) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &mode in modes {
        for &t in steps {
            for &c in cfgs {
                for s in 0..cfg.sweep_seeds {
                    out.push(GridPoint {
                        mode,
                        steps: t,
                        cfg: c,
                        seed: sweep_seed(cfg, s),
                    });
                }
            }
        }
    }
    out
}

/// Guidance strengths that actually reach the model: a strength for an
/// absent source has no effect and is reported as 1.
fn effective(p: &GridPoint) -> (f64, f64) {
    (
        if p.mode.uses_context() { p.cfg } else { 1.0 },
        if p.mode.uses_style() { p.cfg } else { 1.0 },
    )
}

/// Evaluates every grid point (points that differ only in an inert
/// strength share one evaluation). Points run in parallel; rows come back
/// sorted by mode, steps, strengths and seed.
pub fn run_grid(
    cfg: &ExperimentConfig,
    model: &DenoiserModel<f32>,
    corpus: &Corpus,
    eval: &EvalData,
    points: &[GridPoint],
) -> Result<SweepResult> {
    let unique: BTreeSet<(Mode, usize, u64, u64, u64)> = points
        .iter()
        .map(|p| {
            let (c, s) = effective(p);
            (p.mode, p.steps, c.to_bits(), s.to_bits(), p.seed)
        })
        .collect();
    let unique: Vec<_> = unique.into_iter().collect();
    let rows: Vec<SweepRow> = unique
        .par_iter()
        .map(|&(mode, steps, c, s, seed)| -> Result<SweepRow> {
            let settings = SampleSettings {
                mode,
                steps,
                cfg_context: f64::from_bits(c),
                cfg_style: f64::from_bits(s),
                stereo_width: 0.0,
                stochasticity: cfg.sample.stochasticity,
                integrator: cfg.sample.integrator,
                mask: MaskChoice::None,
            };
            let g = generate(model, corpus, &eval.split.conditioning, &settings, &eval.embedder, seed)?;
            let emb = eval.embed_generated(&g.left)?;
            let report = eval.evaluate(&emb, mode.uses_context(), mode.uses_text())?;
            Ok(SweepRow {
                mode,
                steps,
                cfg_context: settings.cfg_context,
                cfg_style: settings.cfg_style,
                seed,
                metrics: report.metrics.into_iter().map(|(k, v)| (k, v.value)).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let by_key: BTreeMap<_, SweepRow> = rows.into_iter().map(|r| (r.key(), r)).collect();
    let mut out: Vec<SweepRow> = points
        .iter()
        .map(|p| {
            let (c, s) = effective(p);
            let mut row = by_key[&(p.mode, p.steps, c.to_bits(), s.to_bits(), p.seed)].clone();
            row.cfg_context = if p.mode.uses_context() { p.cfg } else { row.cfg_context };
            row.cfg_style = if p.mode.uses_style() { p.cfg } else { row.cfg_style };
            row
        })
        .collect();
    out.sort_by_key(|a| a.key());
    out.dedup_by(|a, b| a.key() == b.key());
    Ok(SweepResult { rows: out })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

impl SweepResult {
    /// Median over seeds of `metric` at one grid point; `cfg` is matched
    /// against the strengths of the sources the mode uses.
    pub fn median(&self, mode: Mode, steps: usize, cfg: f64, metric: &str) -> Option<f64> {
        median(
            self.rows
                .iter()
                .filter(|r| r.mode == mode && r.steps == steps)
                .filter(|r| {
                    (!mode.uses_context() || r.cfg_context == cfg) && (!mode.uses_style() || r.cfg_style == cfg)
                })
                .filter_map(|r| r.metric(metric))
                .collect(),
        )
    }

    /// The row with the lowest MMD².
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.metric("mmd2").is_some())
            .min_by(|a, b| a.metric("mmd2").unwrap().total_cmp(&b.metric("mmd2").unwrap()))
    }

    /// `(mode, steps, cfg_context, cfg_style, median MMD², seeds)` ascending
    /// in median MMD².
    pub fn ranked(&self) -> Vec<(Mode, usize, f64, f64, f64, usize)> {
        let mut groups: BTreeMap<(Mode, usize, u64, u64), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            if let Some(m) = r.metric("mmd2") {
                groups
                    .entry((r.mode, r.steps, r.cfg_context.to_bits(), r.cfg_style.to_bits()))
                    .or_default()
                    .push(m);
            }
        }
        let mut out: Vec<_> = groups
            .into_iter()
            .map(|((m, t, c, s), v)| {
                let n = v.len();
                (
                    m,
                    t,
                    f64::from_bits(c),
                    f64::from_bits(s),
                    median(v).expect("non-empty"),
                    n,
                )
            })
            .collect();
        out.sort_by(|a, b| a.4.total_cmp(&b.4));
        out
    }

    /// CSV with a `# config_hash=…` first line.
    pub fn to_csv(&self, config_hash: &str) -> Result<Vec<u8>> {
        let path = Path::new("sweep.csv");
        let mut buf = format!("# config_hash={config_hash}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec!["mode", "T", "cfg_context", "cfg_style", "seed"];
            header.extend(METRIC_COLUMNS);
            w.write_record(&header).map_err(csv_err(path))?;
            for r in &self.rows {
                let mut rec = vec![
                    r.mode.name().to_string(),
                    r.steps.to_string(),
                    r.cfg_context.to_string(),
                    r.cfg_style.to_string(),
                    r.seed.to_string(),
                ];
                rec.extend(
                    METRIC_COLUMNS
                        .iter()
                        .map(|m| r.metric(m).map(|v| v.to_string()).unwrap_or_default()),
                );
                w.write_record(&rec).map_err(csv_err(path))?;
            }
            w.flush().map_err(Error::io(path))?;
        }
        Ok(buf)
    }

    pub fn from_csv(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err(path))?;
            if rec.len() != 5 + METRIC_COLUMNS.len() {
                return Err(fmt(format!("row has {} fields", rec.len())));
            }
            let num =
                |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| fmt(format!("bad number `{}`", &rec[i]))) };
            let mut metrics = BTreeMap::new();
            for (j, m) in METRIC_COLUMNS.iter().enumerate() {
                if !rec[5 + j].is_empty() {
                    metrics.insert(m.to_string(), num(5 + j)?);
                }
            }
            rows.push(SweepRow {
                mode: rec[0].parse().map_err(|_| fmt(format!("bad mode `{}`", &rec[0])))?,
                steps: num(1)? as usize,
                cfg_context: num(2)?,
                cfg_style: num(3)?,
                seed: rec[4].parse().map_err(|_| fmt(format!("bad seed `{}`", &rec[4])))?,
                metrics,
            });
        }
        Ok(Self { rows })
    }

    /// Markdown ranking by median MMD² plus the single best row.
    pub fn summary_markdown(&self, title: &str, config_hash: &str) -> String {
        let mut s = format!("# {title}\n\nconfig hash: `{config_hash}`\n\n");
        s.push_str(
            "| rank | mode | T | cfg_context | cfg_style | median MMD² | seeds |\n|---|---|---|---|---|---|---|\n",
        );
        for (i, (m, t, c, st, v, n)) in self.ranked().iter().enumerate() {
            s.push_str(&format!(
                "| {} | {} | {t} | {c} | {st} | {v:.6} | {n} |\n",
                i + 1,
                m.name()
            ));
        }
        if let Some(b) = self.best() {
            s.push_str(&format!(
                "\nBest single row: mode {}, T={}, cfg=({}, {}), seed {}, MMD² {:.6}\n",
                b.mode.name(),
                b.steps,
                b.cfg_context,
                b.cfg_style,
                b.seed,
                b.metric("mmd2").unwrap_or(f64::NAN)
            ));
        }
        s
    }
}
