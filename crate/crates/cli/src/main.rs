//! `gridscreen`: dataset generation, contingency solving and surrogate scoring.
//!
//! Exit codes: 0 success, 2 invalid input, 3 solve failure, 4 I/O failure,
//! 5 time budget exceeded.

mod error;
mod generate;
mod manifest;
mod score;
mod solve;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::Result;

#[derive(Debug, Parser)]
#[command(name = "gridscreen", version, about = "Power-flow contingency screening and surrogate scoring")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Wall-clock budget in seconds; the command aborts between phases once exceeded.
    #[arg(long, global = true)]
    budget: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the train/val/test/test_ood datasets.
    Generate(generate::GenerateArgs),
    /// Solve a list of scenarios or every single-line outage.
    Solve(solve::SolveArgs),
    /// Score predictions (or a built-in model) against a truth dataset.
    Score(score::ScoreArgs),
    /// Score repeatedly and report mean ± std of the global score.
    Repeat(RepeatArgs),
}

#[derive(Debug, Args)]
struct RepeatArgs {
    #[command(flatten)]
    score: score::ScoreArgs,
    #[arg(long, default_value_t = 10)]
    times: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    Sequential,
    Batched,
}

pub struct Globals {
    pub jobs: Option<usize>,
    pub budget: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(error::CliError::Validation("--jobs must be at least 1".into()));
        }
        // fails only if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    if let Some(b) = cli.budget {
        if !(b > 0.0) {
            return Err(error::CliError::Validation("--budget must be positive".into()));
        }
    }
    let g = Globals {
        jobs: cli.jobs,
        budget: cli.budget,
    };
    match cli.command {
        Command::Generate(a) => generate::run(&a, &g),
        Command::Solve(a) => solve::run(&a, &g),
        Command::Score(a) => score::run(&a, &g).map(|_| ()),
        Command::Repeat(a) => score::repeat(&a.score, a.times, &g),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
