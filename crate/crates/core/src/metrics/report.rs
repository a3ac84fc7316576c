//! Five-batch evaluation protocol and its report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::distances::{adherence, clap_score, density_coverage, frechet, mmd2};

/// Number of candidate batches averaged per metric.
pub const BATCHES: usize = 5;
/// Default desk-scale candidate batch size.
pub const DEFAULT_BATCH_SIZE: usize = 200;
/// Neighbour count for density/coverage.
pub const DC_NEIGHBOURS: usize = 5;
/// Two-sided 95% Student-t quantile with `BATCHES − 1 = 4` degrees of freedom.
const T_975_DOF4: f64 = 2.776_445_105_197_793;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub batches: Vec<f64>,
    pub ci95: f64,
}

impl MetricValue {
    /// Mean of per-batch values with a 95% Student-t half-width.
    pub fn from_batches(batches: Vec<f64>) -> Self {
        let n = batches.len() as f64;
        let value = batches.iter().sum::<f64>() / n;
        let ci95 = if batches.len() == BATCHES {
            let var = batches.iter().map(|b| (b - value).powi(2)).sum::<f64>() / (n - 1.0);
            T_975_DOF4 * (var / n).sqrt()
        } else {
            f64::NAN
        };
        Self { value, batches, ci95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricValue>,
    pub batch_count: usize,
    pub batch_size: usize,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|m| m.value)
    }

    /// `{metric: {value, batches, ci95}}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.metrics).expect("plain data")
    }
}

/// Inputs to [`evaluate`]. All embeddings are unit-norm 64-d rows.
pub struct EvalInputs<'a> {
    /// Reference set of real accompaniments.
    pub reference: &'a [Vec<f64>],
    /// Candidates, at least `5 × batch_size`.
    pub candidates: &'a [Vec<f64>],
    /// Context embedding per candidate, for adherence.
    pub contexts: Option<&'a [Vec<f64>]>,
    /// Description embedding per candidate, for the cosine score.
    pub descriptors: Option<&'a [Vec<f64>]>,
    /// Real (context, accompaniment) pairs the adherence score compares to.
    pub real_pairs: Option<(&'a [Vec<f64>], &'a [Vec<f64>])>,
    pub batch_size: usize,
}

/// Splits candidates into five batches, computes each metric per batch and
/// averages. Keys: `mmd2`, `fd`, `density`, `coverage`, and when inputs
/// allow `adherence` and `clap_score`.
pub fn evaluate(inputs: &EvalInputs<'_>) -> Result<MetricReport> {
    let bs = inputs.batch_size;
    if bs < 2 || inputs.candidates.len() < BATCHES * bs {
        return Err(Error::TooFew {
            what: "candidates for five batches",
            needed: BATCHES * bs.max(2),
            got: inputs.candidates.len(),
        });
    }
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut push = |k: &str, v: f64| cols.entry(k.to_string()).or_default().push(v);
    for b in 0..BATCHES {
        let range = b * bs..(b + 1) * bs;
        let cand = &inputs.candidates[range.clone()];
        push("mmd2", mmd2(cand, inputs.reference)?);
        push("fd", frechet(cand, inputs.reference)?);
        let (density, coverage) = density_coverage(inputs.reference, cand, DC_NEIGHBOURS)?;
        push("density", density);
        push("coverage", coverage);
        if let (Some(ctx), Some((rc, ra))) = (inputs.contexts, inputs.real_pairs) {
            push("adherence", adherence(&ctx[range.clone()], cand, rc, ra)?);
        }
        if let Some(desc) = inputs.descriptors {
            push("clap_score", clap_score(&desc[range.clone()], cand)?);
        }
    }
    Ok(MetricReport {
        metrics: cols
            .into_iter()
            .map(|(k, v)| (k, MetricValue::from_batches(v)))
            .collect(),
        batch_count: BATCHES,
        batch_size: bs,
    })
}
