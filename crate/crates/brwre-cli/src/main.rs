//! `brwre` — command-line front end for the branching-walk toolkit.
//!
//! Every subcommand reads one TOML configuration (flags override the file),
//! writes `results.csv`, `report.json` and `meta.json` into the output
//! directory, and exits 0 on success, 1 when a verification check fails,
//! or 2 on a configuration error that names the offending key.

mod config;
mod jobs;

use clap::{Parser, Subcommand};
use config::RunConfig;
use jobs::JobError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "brwre",
    version,
    about = "Branching random walk in random environment: barrier probabilities, \
             maxima simulation and verification suite"
)]
struct Cli {
    /// Path to a TOML configuration (defaults apply when omitted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides the configuration file.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads (0 = one per logical CPU); overrides the file.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Output directory; overrides the file.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the environment and tabulate its derived sequences.
    EnvSample,
    /// Barrier-crossing probability for the configured event.
    BarrierProb,
    /// Simulate replica maxima of the branching walk.
    Simulate,
    /// Tightness experiment over an environment pool.
    Tightness,
    /// Run the complete verification suite.
    VerifyAll,
    /// Render a static SVG summary from an existing tightness CSV.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig, JobError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                JobError::Config(config::ConfigError {
                    key: "--config".to_owned(),
                    message: format!("cannot read {}: {e}", path.display()),
                })
            })?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.global.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.global.threads = threads;
    }
    if let Some(out) = &cli.out {
        cfg.global.out_dir = out.display().to_string();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if cfg.global.threads > 0 {
        // Best effort: a second call in the same process (tests) keeps the
        // first pool, which is fine because results are thread-invariant.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.global.threads)
            .build_global();
    }
    let outcome = match cli.command {
        Command::EnvSample => jobs::env_sample(&cfg),
        Command::BarrierProb => jobs::barrier_prob(&cfg),
        Command::Simulate => jobs::simulate(&cfg),
        Command::Tightness => jobs::tightness(&cfg),
        Command::VerifyAll => jobs::verify_all(&cfg),
        Command::Report => jobs::report(&cfg),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification suite reported failures (see report.json)");
            ExitCode::from(1)
        }
        Err(e @ JobError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
