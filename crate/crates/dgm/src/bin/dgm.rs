//! Configuration-driven experiment runner.

use clap::{Parser, Subcommand};
use dgm::cli::{cmd_baseline, cmd_compare, cmd_evaluate, cmd_train, exit_code, CliOverrides, Source};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dgm", version, about = "Mesh-free PDE solving by residual minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration file.
    config: PathBuf,
    /// Override the config's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-threaded accumulation and zeroed wall-clock fields, so every
    /// emitted byte is reproducible.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn overrides(&self) -> CliOverrides {
        CliOverrides {
            seed: self.seed,
            out: self.out.clone(),
            deterministic: self.deterministic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured problem; writes checkpoint.ckpt and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the configured grid; writes surface.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare a candidate surface against a reference; writes errors.csv,
    /// errors_by_slice.csv and summary.json.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Candidate: a trained checkpoint.
        #[arg(long, conflicts_with_all = ["candidate_csv", "oracle_self"])]
        checkpoint: Option<PathBuf>,
        /// Candidate: a previously emitted surface file.
        #[arg(long, conflicts_with = "oracle_self")]
        candidate_csv: Option<PathBuf>,
        /// Candidate: the closed form itself (sanity check; zero errors).
        #[arg(long)]
        oracle_self: bool,
        /// Reference surface file; defaults to the closed form.
        #[arg(long)]
        reference_csv: Option<PathBuf>,
    },
    /// Run a classical solver; writes its surface on the evaluation grid.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// One of: bs_grid, mc_call, ou_density, mfg_grid.
        #[arg(long)]
        scheme: String,
    },
}

fn run() -> dgm::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { common } => cmd_train(&common.config, &common.overrides()),
        Command::Evaluate { common, checkpoint } => {
            cmd_evaluate(&common.config, &checkpoint, &common.overrides())
        }
        Command::Compare {
            common,
            checkpoint,
            candidate_csv,
            oracle_self,
            reference_csv,
        } => {
            let candidate = if oracle_self {
                Source::Oracle
            } else if let Some(p) = checkpoint {
                Source::Checkpoint(p)
            } else if let Some(p) = candidate_csv {
                Source::SurfaceCsv(p)
            } else {
                return Err(dgm::DgmError::Config(
                    "compare needs --checkpoint, --candidate-csv or --oracle-self".to_string(),
                ));
            };
            let reference = match reference_csv {
                Some(p) => Source::SurfaceCsv(p),
                None => Source::Oracle,
            };
            cmd_compare(&common.config, &candidate, &reference, &common.overrides())
        }
        Command::Baseline { common, scheme } => {
            cmd_baseline(&common.config, &scheme, &common.overrides())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
