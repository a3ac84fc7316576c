//! Plot-ready CSV and a markdown summary assembled from a results
//! directory.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::pipeline::{csv_err, Artifacts};
use crate::harness::sweep::SweepResult;

/// Marker written where a result is missing.
pub const GAP: &str = "NA";

/// Content hash in the style of a git blob id, with SHA-256:
/// `sha256("blob <len>\0" ‖ bytes)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>> {
    match std::fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
    }
}

/// MMD² against step count: one row per step count, one column per mode, cells are
/// the median MMD² over seeds at guidance strength 1.
pub fn fig2_csv(cfg: &ExperimentConfig, fig2: Option<&SweepResult>) -> Result<Vec<u8>> {
    let path = Path::new("fig2.csv");
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["T".to_string()];
        header.extend(cfg.fig2_modes.iter().map(|m| m.name().to_string()));
        w.write_record(&header).map_err(csv_err(path))?;
        for &t in &cfg.sweep_steps {
            let mut rec = vec![t.to_string()];
            for &m in &cfg.fig2_modes {
                let v = fig2.and_then(|f| f.median(m, t, 1.0, "mmd2"));
                rec.push(v.map(|x| x.to_string()).unwrap_or_else(|| GAP.to_string()));
            }
            w.write_record(&rec).map_err(csv_err(path))?;
        }
        w.flush().map_err(Error::io(path))?;
    }
    Ok(buf)
}

/// Writes `fig2.csv` and `report.md` into `art.dir`. Missing inputs are
/// listed and their sections carry gap markers. Returns the number of
/// missing inputs.
pub fn cmd_report(cfg: &ExperimentConfig, art: &Artifacts) -> Result<usize> {
    let inputs = [
        art.fig2_sweep(),
        art.sweep(),
        art.table1("md"),
        art.eval(),
        art.ldm_log(),
    ];
    let mut contents = Vec::new();
    for p in &inputs {
        contents.push(read_optional(p)?);
    }
    let fig2 = match &contents[0] {
        Some(b) => Some(SweepResult::from_csv(b, &inputs[0])?),
        None => None,
    };
    let sweep = match &contents[1] {
        Some(b) => Some(SweepResult::from_csv(b, &inputs[1])?),
        None => None,
    };
    let fig2_bytes = fig2_csv(cfg, fig2.as_ref())?;
    std::fs::write(art.fig2(), &fig2_bytes).map_err(Error::io(art.fig2()))?;

    let mut md = String::from("# Experiment report\n\n");
    md.push_str(&format!(
        "## Configuration\n\nhash: `{}`\n\n```text\n{}```\n\n",
        cfg.hash(),
        cfg.echo()
    ));
    md.push_str("## Inputs\n\n| file | content hash |\n|---|---|\n");
    let mut missing = 0;
    for (p, c) in inputs.iter().zip(&contents) {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("?");
        let h = match c {
            Some(b) => format!("`{}`", blob_hash(b)),
            None => {
                missing += 1;
                format!("{GAP} (missing)")
            }
        };
        md.push_str(&format!("| {name} | {h} |\n"));
    }
    md.push_str("\n## MMD² against T (guidance 1, median over seeds)\n\n| T |");
    for m in &cfg.fig2_modes {
        md.push_str(&format!(" {} |", m.label()));
    }
    md.push_str("\n|---|");
    md.push_str(&"---|".repeat(cfg.fig2_modes.len()));
    md.push('\n');
    for &t in &cfg.sweep_steps {
        md.push_str(&format!("| {t} |"));
        for &m in &cfg.fig2_modes {
            let v = fig2.as_ref().and_then(|f| f.median(m, t, 1.0, "mmd2"));
            md.push_str(&format!(
                " {} |",
                v.map(|x| format!("{x:.6}")).unwrap_or_else(|| GAP.into())
            ));
        }
        md.push('\n');
    }
    md.push_str("\n## Sweep ranking\n\n");
    match &sweep {
        Some(s) => {
            md.push_str("| rank | mode | T | cfg_context | cfg_style | median MMD² |\n|---|---|---|---|---|---|\n");
            for (i, (m, t, c, st, v, _)) in s.ranked().iter().take(10).enumerate() {
                md.push_str(&format!("| {} | {} | {t} | {c} | {st} | {v:.6} |\n", i + 1, m.name()));
            }
        }
        None => md.push_str(&format!("{GAP}: sweep results missing\n")),
    }
    md.push_str("\n## Objective metrics table\n\n");
    match &contents[2] {
        Some(b) => md.push_str(&String::from_utf8_lossy(b)),
        None => md.push_str(&format!("{GAP}: table missing\n")),
    }
    std::fs::write(art.report(), md.as_bytes()).map_err(Error::io(art.report()))?;
    Ok(missing)
}
