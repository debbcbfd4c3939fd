//! `scaffold-rl`: train, ablate, grade and inspect rubric-scaffolded RL runs.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration or
//! input, 3 judge or embedding backend unavailable.

mod config;
mod evaluate;
mod tools;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, Overrides, RunConfig};

/// An external service failed outside the grader (exit code 3).
#[derive(Debug)]
pub struct BackendError(pub String);

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BackendError {}

#[derive(Debug, Parser)]
#[command(name = "scaffold-rl", version, about = "Rubric-scaffolded RL experiments on a synthetic policy")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy and write history, metrics, schedule and checkpoints.
    Train,
    /// One training run per sweep cell, sharing the seed.
    Ablate(train::SweepArgs),
    /// Score a responses file against the dataset rubrics.
    Grade {
        /// JSONL of `{task_id, response}`.
        #[arg(long)]
        responses: PathBuf,
    },
    /// Best-of-N curve of a checkpoint.
    Bon {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Strictly ascending sample counts.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 8, 16])]
        n: Vec<usize>,
    },
    /// Diversity of a responses file and novelty of a policy update.
    Metrics(evaluate::MetricsArgs),
    /// Generate a synthetic rubric suite with witness responses.
    GenData(tools::GenDataArgs),
    /// Render (and optionally submit) the rubric-generation prompt.
    RubricPrompt(tools::RubricPromptArgs),
    /// Print the per-step scaffold ratios as CSV.
    Schedule {
        /// Number of steps; defaults to the planned training length.
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    match cli.command {
        Command::Train => train::cmd_train(&cfg),
        Command::Ablate(sweep) => train::cmd_ablate(&cfg, &sweep),
        Command::Grade { responses } => evaluate::cmd_grade(&cfg, &responses),
        Command::Bon { checkpoint, n } => evaluate::cmd_bon(&cfg, &checkpoint, &n),
        Command::Metrics(args) => evaluate::cmd_metrics(&cfg, &args),
        Command::GenData(args) => tools::cmd_gen_data(&cfg, &args),
        Command::RubricPrompt(args) => tools::cmd_rubric_prompt(&cfg, &args),
        Command::Schedule { steps } => train::cmd_schedule(&cfg, steps),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use scaffold_core::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<BackendError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            if e.is_backend() {
                return 3;
            }
            if matches!(
                e,
                E::BadConfig(_)
                    | E::BadSpec(_)
                    | E::ValidationFailure(_)
                    | E::RubricInvalid(_)
                    | E::EmptyInput(_)
            ) {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
