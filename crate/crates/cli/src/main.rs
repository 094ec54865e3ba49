//! `gmcd`: pack, gen-data, train, sample and eval.
//!
//! Failures print one line, `error: code=<CODE> msg=<text>`, and exit with
//! 2 for bad input, 3 for I/O, 4 for integrity and 5 for numeric failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmcd::{GmcdError, Result};

use commands::{Context, EvalInputs};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "gmcd", version, about = "Gaussian mixture categorical diffusion")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every component seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for batched work.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Evaluation trials, each with its own seed.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Also write the per-step mean entropy when sampling.
    #[arg(long, global = true)]
    entropy: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Place category means on the unit sphere.
    Pack {
        #[arg(long)]
        num_categories: Option<usize>,
        #[arg(long)]
        latent_dim: Option<usize>,
    },
    /// Draw synthetic permutation data and split it.
    GenData {
        #[arg(long)]
        num_categories: Option<usize>,
        #[arg(long)]
        num_sequences: Option<usize>,
        /// Comma-separated split ratios summing to one.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Train a predictor; writes model.ckpt (best) and last.ckpt.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        alphabet: Option<PathBuf>,
        #[arg(long)]
        packing: Option<PathBuf>,
        /// Continue from a checkpoint; its step counter carries on.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        max_iterations: Option<u64>,
    },
    /// Draw sequences from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        num_samples: Option<usize>,
    },
    /// Score samples against the synthetic truth or a reference set.
    Eval {
        /// Sample file; trials then re-seed only the Poissonization.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Checkpoint to draw fresh samples from on every trial.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        num_samples: Option<usize>,
        #[arg(long)]
        truth_k: Option<usize>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        alphabet: Option<PathBuf>,
    },
}

fn exit_code(err: &GmcdError) -> u8 {
    match err {
        GmcdError::Io(_) => 3,
        GmcdError::Integrity(_) => 4,
        GmcdError::Numeric(_) => 5,
        _ => 2,
    }
}

fn report(code: &str, msg: &str) {
    let line = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: code={code} msg={line}");
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(GmcdError::InvalidArgument(format!("--config: no such file {}", p.display())));
            }
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(GmcdError::InvalidArgument("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| GmcdError::InvalidArgument(format!("--workers: {e}")))?;
    }
    match &cli.command {
        Command::Pack { num_categories, latent_dim } => {
            if let Some(k) = num_categories {
                cfg.packing.num_categories = *k;
            }
            if let Some(d) = latent_dim {
                cfg.packing.latent_dim = *d;
            }
        }
        Command::GenData { num_categories, num_sequences, ratios } => {
            if num_categories.is_some() {
                cfg.data.num_categories = *num_categories;
            }
            if let Some(n) = num_sequences {
                cfg.data.num_sequences = *n;
            }
            if let Some(r) = ratios {
                cfg.data.split_ratios = r.clone();
            }
        }
        Command::Train { train, valid, alphabet, packing, max_iterations, .. } => {
            for (slot, flag) in [
                (&mut cfg.data.train, train),
                (&mut cfg.data.valid, valid),
                (&mut cfg.data.alphabet, alphabet),
                (&mut cfg.data.packing, packing),
            ] {
                if flag.is_some() {
                    *slot = flag.clone();
                }
            }
            if let Some(n) = max_iterations {
                cfg.training.max_iterations = *n;
            }
        }
        Command::Sample { .. } => {}
        Command::Eval { alphabet, .. } => {
            if alphabet.is_some() {
                cfg.data.alphabet = alphabet.clone();
            }
        }
    }
    let ctx = Context::new(cfg, cli.out.clone(), cli.trials, cli.entropy)?;
    let written = match &cli.command {
        Command::Pack { .. } => commands::pack(&ctx)?,
        Command::GenData { .. } => commands::gen_data(&ctx)?,
        Command::Train { resume, .. } => commands::train(&ctx, resume.as_deref())?,
        Command::Sample { checkpoint, num_samples } => commands::sample(&ctx, checkpoint.as_deref(), *num_samples)?,
        Command::Eval { samples, checkpoint, num_samples, truth_k, reference, .. } => commands::eval(
            &ctx,
            EvalInputs {
                samples: samples.as_deref(),
                checkpoint: checkpoint.as_deref(),
                truth_k: *truth_k,
                reference: reference.as_deref(),
                num_samples: *num_samples,
            },
        )?,
    };
    println!("{}", written.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            report("INVALID_ARGUMENT", first);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.code(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
    }
}
