//! `accomp`: command-line driver for corpus generation, training, sampling,
//! evaluation, sweeps and report emission.
//!
//! Every command reads the key-value config (`--config`), applies the
//! command-line overrides to it and writes into the `--out` directory.
//! Input artifacts default to their conventional names inside `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use accomp_core::error::{Error, Result};
use accomp_core::harness::{
    cmd_datagen, cmd_eval, cmd_report, cmd_sample, cmd_sweep, cmd_table1, cmd_train_codec, cmd_train_ldm, exit_code,
    Artifacts, ExperimentConfig, Inputs,
};

#[derive(Parser, Debug)]
#[command(name = "accomp", version, about = "Latent-diffusion accompaniment engine")]
struct Cli {
    /// Key-value configuration file; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Upstream {
    /// Codec checkpoint (default `<out>/codec.darf`).
    #[arg(long)]
    codec: Option<PathBuf>,
    /// Corpus file (default `<out>/corpus.darc`).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Denoiser checkpoint (default `<out>/ldm.darf`).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Proceed even when recorded input hashes do not match.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate tracksets, pair and encode them into the corpus.
    Datagen {
        #[command(flatten)]
        up: Upstream,
    },
    /// Train the consistency codec.
    TrainCodec {
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Train the latent denoiser on the corpus.
    TrainLdm {
        #[command(flatten)]
        up: Upstream,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Generate one accompaniment per evaluation conditioning pair.
    Sample {
        #[command(flatten)]
        up: Upstream,
        /// full, text-context, context-only, style-only, text-only or uncond.
        #[arg(long)]
        mode: Option<String>,
        /// Number of denoising steps.
        #[arg(long = "T")]
        steps: Option<usize>,
        #[arg(long)]
        cfg_context: Option<f64>,
        #[arg(long)]
        cfg_style: Option<f64>,
        #[arg(long)]
        stereo_width: Option<f64>,
        /// Samples file (default `<out>/samples.darf`).
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Evaluate a samples file against the held-out reference set.
    Eval {
        #[command(flatten)]
        up: Upstream,
        /// Samples file (default `<out>/samples.darf`).
        #[arg(long)]
        gen: Option<PathBuf>,
        /// JSON report (default `<out>/eval.json`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate the step/guidance/mode grid over every sweep seed.
    Sweep {
        #[command(flatten)]
        up: Upstream,
    },
    /// Objective-metrics table for the configured (T, cfg) pairs.
    Table1 {
        #[command(flatten)]
        up: Upstream,
    },
    /// Plot-ready CSV and markdown summary of the results directory.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::parse("")?,
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with("seed", s)?;
    }
    if let Some(o) = &cli.out {
        cfg = cfg.with("out", o.display())?;
    }
    if let Some(t) = cli.threads {
        cfg = cfg.with("threads", t)?;
    }
    Ok(cfg)
}

fn or_default(given: &Option<PathBuf>, default: PathBuf) -> PathBuf {
    given.clone().unwrap_or(default)
}

struct Paths {
    codec: PathBuf,
    corpus: PathBuf,
    ckpt: PathBuf,
    force: bool,
}

impl Paths {
    fn new(up: &Upstream, art: &Artifacts) -> Self {
        Self {
            codec: or_default(&up.codec, art.codec()),
            corpus: or_default(&up.corpus, art.corpus()),
            ckpt: or_default(&up.ckpt, art.ldm()),
            force: up.force,
        }
    }

    fn inputs(&self) -> Inputs<'_> {
        Inputs {
            ckpt: &self.ckpt,
            corpus: &self.corpus,
            codec: &self.codec,
            force: self.force,
        }
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if cfg.threads > 0 {
        // Only fails when a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let art = Artifacts::new(&cfg.out);
    art.ensure_dir()?;
    match &cli.command {
        Command::Datagen { up } => {
            let p = Paths::new(up, &art);
            require(&p.codec)?;
            let n = cmd_datagen(&cfg, &p.codec, &art.corpus())?;
            println!("wrote {n} pairs to {}", art.corpus().display());
        }
        Command::TrainCodec { steps } => {
            if let Some(s) = steps {
                cfg = cfg.with("codec.steps", s)?;
            }
            let s = cmd_train_codec(&cfg, &art.codec())?;
            println!(
                "codec: {} steps ({} skipped), loss {:.3e} -> {:.3e}, boundary deviation {:.1e}",
                s.steps, s.skipped, s.initial_loss, s.final_loss, s.boundary
            );
        }
        Command::TrainLdm { up, steps } => {
            if let Some(s) = steps {
                cfg = cfg.with("ldm.steps", s)?;
            }
            let p = Paths::new(up, &art);
            require(&p.corpus)?;
            let s = cmd_train_ldm(&cfg, &p.corpus, &art.ldm(), &art.ldm_log())?;
            println!(
                "denoiser: {} parameters, {} steps ({} skipped), final loss {:.4}",
                s.parameters,
                s.steps,
                s.skipped,
                s.log.last().map(|l| l.1).unwrap_or(f64::NAN)
            );
        }
        Command::Sample {
            up,
            mode,
            steps,
            cfg_context,
            cfg_style,
            stereo_width,
            samples,
        } => {
            if let Some(m) = mode {
                cfg = cfg.with("sample.mode", m)?;
            }
            if let Some(t) = steps {
                cfg = cfg.with("sample.steps", t)?;
            }
            if let Some(c) = cfg_context {
                cfg = cfg.with("sample.cfg_context", c)?;
            }
            if let Some(c) = cfg_style {
                cfg = cfg.with("sample.cfg_style", c)?;
            }
            if let Some(w) = stereo_width {
                cfg = cfg.with("sample.stereo_width", w)?;
            }
            let p = Paths::new(up, &art);
            for f in [&p.ckpt, &p.corpus, &p.codec] {
                require(f)?;
            }
            let out = or_default(samples, art.samples());
            let g = cmd_sample(&cfg, &p.inputs(), &out)?;
            println!("wrote {} sequences to {}", g.left.dim(0), out.display());
        }
        Command::Eval { up, gen, report } => {
            let p = Paths::new(up, &art);
            let gen = or_default(gen, art.samples());
            for f in [&gen, &p.corpus, &p.codec] {
                require(f)?;
            }
            let out = or_default(report, art.eval());
            let r = cmd_eval(&cfg, &gen, &p.corpus, &p.codec, &out, p.force)?;
            for (k, v) in &r.metrics {
                println!("{k:>10} {:.5} ± {:.5}", v.value, v.ci95);
            }
        }
        Command::Sweep { up } => {
            let p = Paths::new(up, &art);
            for f in [&p.ckpt, &p.corpus, &p.codec] {
                require(f)?;
            }
            let (main, _) = cmd_sweep(&cfg, &p.inputs(), &art)?;
            if let Some((mode, t, cc, cs, mmd2, _)) = main.ranked().first() {
                println!("best by median MMD²: {mode} T={t} cfg=({cc}, {cs}) MMD²={mmd2:.5}");
            }
        }
        Command::Table1 { up } => {
            let p = Paths::new(up, &art);
            for f in [&p.ckpt, &p.corpus, &p.codec] {
                require(f)?;
            }
            let t = cmd_table1(&cfg, &p.inputs(), &art)?;
            print!("{}", t.to_markdown());
        }
        Command::Report => {
            let missing = cmd_report(&cfg, &art)?;
            println!("wrote {} ({missing} inputs missing)", art.report().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
