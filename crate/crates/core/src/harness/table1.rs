//! Objective-metrics table: real data, a lower bound and every
//! conditioning mode, for two sampling configurations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::DenoiserModel;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, MaskChoice, Mode, SampleSettings};
use crate::harness::pipeline::{csv_err, generate, shuffled_within_batches, EvalData};
use crate::metrics::{evaluate, EvalInputs, MetricReport};
use crate::synthdata::Corpus;

/// Column keys and headers, in table order.
pub const COLUMNS: [(&str, &str); 6] = [
    ("mmd2", "MMD²"),
    ("fd", "FD"),
    ("coverage", "Coverage"),
    ("density", "Density"),
    ("adherence", "APA"),
    ("clap_score", "CS"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub label: String,
    /// One cell per entry of [`COLUMNS`]; `None` where undefined.
    pub cells: Vec<Option<f64>>,
}

impl Table1Row {
    fn from_report(label: &str, r: &MetricReport) -> Self {
        Self {
            label: label.to_string(),
            cells: COLUMNS.iter().map(|(k, _)| r.get(k)).collect(),
        }
    }

    pub fn cell(&self, key: &str) -> Option<f64> {
        COLUMNS.iter().position(|(k, _)| *k == key).and_then(|i| self.cells[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Block {
    pub steps: usize,
    pub cfg: f64,
    pub rows: Vec<Table1Row>,
}

impl Table1Block {
    pub fn row(&self, label: &str) -> Option<&Table1Row> {
        self.rows.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub config_hash: String,
    pub config: String,
    pub blocks: Vec<Table1Block>,
}

pub const REAL_ROW: &str = "Real";
pub const LOWER_BOUND_ROW: &str = "Lower bound";

/// Reference rows shared by every block. The lower bound takes its
/// distribution metrics from codec-encoded white noise, its adherence from
/// real accompaniments paired with the wrong contexts and its description
/// score from real audio paired with the wrong descriptions.
fn reference_rows(cfg: &ExperimentConfig, eval: &EvalData, codec_path: &Path) -> Result<Vec<Table1Row>> {
    let real = Table1Row::from_report(REAL_ROW, &eval.evaluate(&eval.real, true, true)?);
    let noise = eval.evaluate(&eval.noise_embeddings(cfg, codec_path)?, false, false)?;
    let shuffled_audio = shuffled_within_batches(&eval.real, eval.batch_size);
    let shuffled_desc = shuffled_within_batches(&eval.descriptors, eval.batch_size);
    let mismatched = evaluate(&EvalInputs {
        reference: &eval.reference,
        candidates: &shuffled_audio,
        contexts: Some(&eval.contexts),
        descriptors: None,
        real_pairs: Some((&eval.reference_contexts, &eval.reference)),
        batch_size: eval.batch_size,
    })?;
    let random_text = evaluate(&EvalInputs {
        reference: &eval.reference,
        candidates: &eval.real,
        contexts: None,
        descriptors: Some(&shuffled_desc),
        real_pairs: None,
        batch_size: eval.batch_size,
    })?;
    let mut lower = Table1Row::from_report(LOWER_BOUND_ROW, &noise);
    lower.cells[4] = mismatched.get("adherence");
    lower.cells[5] = random_text.get("clap_score");
    Ok(vec![real, lower])
}

pub fn build_table1(
    cfg: &ExperimentConfig,
    model: &DenoiserModel<f32>,
    corpus: &Corpus,
    eval: &EvalData,
    codec_path: &Path,
) -> Result<Table1> {
    let reference = reference_rows(cfg, eval, codec_path)?;
    let mut blocks = Vec::new();
    for &(steps, strength) in &cfg.table1_configs {
        let mut rows = reference.clone();
        for mode in Mode::ALL {
            let settings = SampleSettings {
                mode,
                steps,
                cfg_context: strength,
                cfg_style: strength,
                stereo_width: 0.0,
                stochasticity: cfg.sample.stochasticity,
                integrator: cfg.sample.integrator,
                mask: MaskChoice::None,
            };
            let g = generate(
                model,
                corpus,
                &eval.split.conditioning,
                &settings,
                &eval.embedder,
                cfg.seed,
            )?;
            let report = eval.evaluate(&eval.embed_generated(&g.left)?, mode.uses_context(), mode.uses_text())?;
            rows.push(Table1Row::from_report(mode.label(), &report));
        }
        blocks.push(Table1Block {
            steps,
            cfg: strength,
            rows,
        });
    }
    Ok(Table1 {
        config_hash: cfg.hash(),
        config: cfg.echo(),
        blocks,
    })
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl Table1 {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data") + "\n"
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let path = Path::new("table1.csv");
        let mut buf = format!("# config_hash={}\n", self.config_hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec!["T", "cfg", "row"];
            header.extend(COLUMNS.iter().map(|c| c.0));
            w.write_record(&header).map_err(csv_err(path))?;
            for b in &self.blocks {
                for r in &b.rows {
                    let mut rec = vec![b.steps.to_string(), b.cfg.to_string(), r.label.clone()];
                    rec.extend(r.cells.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
                    w.write_record(&rec).map_err(csv_err(path))?;
                }
            }
            w.flush().map_err(Error::io(path))?;
        }
        Ok(buf)
    }

    /// One markdown table per configuration; undefined cells stay empty.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        for b in &self.blocks {
            s.push_str(&format!("### T={}, CFG={}\n\n| |", b.steps, b.cfg));
            for (_, h) in COLUMNS {
                s.push_str(&format!(" {h} |"));
            }
            s.push_str("\n|---|");
            s.push_str(&"---|".repeat(COLUMNS.len()));
            s.push('\n');
            for r in &b.rows {
                s.push_str(&format!("| {} |", r.label));
                for c in &r.cells {
                    s.push_str(&format!(" {} |", fmt_cell(*c)));
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }
}
