//! `avrn`: train, evaluate and inspect audiovisual video summarizers.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or file error,
//! 4 training divergence, 5 failed gradient check.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use avrn::model::ModelVariant;
use avrn::Error;
use clap::{Parser, Subcommand};

use config::{RunConfig, RunFlags};

#[derive(Parser)]
#[command(name = "avrn", version, about = "Audiovisual recurrent summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per split; writes split-K/checkpoint.avfs and trace.json.
    Train {
        #[command(flatten)]
        run: RunFlags,
    },
    /// Evaluate trained checkpoints; writes results.json and results.csv.
    Evaluate {
        #[command(flatten)]
        run: RunFlags,
        /// Directory written by `train`; its run.json supplies the defaults.
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Summarize one video; writes summary.json and curve.csv.
    Summarize {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: String,
    },
    /// Train and evaluate several variants; writes ablation.csv.
    Ablate {
        #[command(flatten)]
        run: RunFlags,
        /// Comma-separated; all variants when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<ModelVariant>,
    },
    /// Finite-difference gradient check of every variant.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skew the analytic gradients so the check must fail.
        #[arg(long)]
        corrupt_gradient: bool,
        /// Also write gradcheck.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a small synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Include ground-truth shot boundaries.
        #[arg(long)]
        write_shots: bool,
    },
}

enum Failure {
    Core(Error),
    Gradcheck(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { run } => commands::train(&run.resolve()?)?,
        Command::Evaluate { run, checkpoints } => {
            let run_file = checkpoints.join(commands::RUN_FILE);
            let base = if run.config.is_none() && run_file.exists() {
                RunConfig::read(&run_file)?
            } else {
                RunConfig::default()
            };
            let mut cfg = run.resolve_over(base)?;
            if run.out.is_none() {
                cfg.out = checkpoints.clone();
            }
            commands::evaluate(&cfg, &checkpoints)?;
        }
        Command::Summarize { run, checkpoint, video } => {
            commands::summarize(&run.resolve()?, &checkpoint, &video)?;
        }
        Command::Ablate { run, variants } => {
            let variants = if variants.is_empty() {
                ModelVariant::ALL.to_vec()
            } else {
                variants
            };
            commands::ablate(&run.resolve()?, &variants)?;
        }
        Command::Gradcheck {
            seed,
            corrupt_gradient,
            out,
        } => {
            let checks = commands::gradcheck(seed, corrupt_gradient, out.as_deref())?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Failure::Gradcheck(failed));
            }
        }
        Command::Synth { out, seed, write_shots } => {
            commands::synth(&out, seed, write_shots)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gradcheck(n)) => {
            eprintln!("error: gradient check failed for {n} variant(s)");
            ExitCode::from(5)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Divergence { .. } => 4,
                _ => 3,
            })
        }
    }
}
