use std::fmt;
use std::path::Path;

use gridscreen_core::grid::CaseError;
use gridscreen_core::metrics::MetricError;
use gridscreen_core::scenario::ScenarioError;
use gridscreen_core::scoring::ScoreError;
use gridscreen_core::surrogate::SurrogateError;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad config, arguments or inputs (exit 2).
    Validation(String),
    /// A solve did not converge or a topology could not be solved (exit 3).
    Convergence(String),
    /// Reading or writing files failed (exit 4).
    Io(String),
    /// The --budget wall-clock limit was exceeded (exit 5).
    Budget { limit: f64, elapsed: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Convergence(_) => 3,
            CliError::Io(_) => 4,
            CliError::Budget { .. } => 5,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Convergence(m) => write!(f, "solve failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Budget { limit, elapsed } => {
                write!(f, "time budget of {limit} s exceeded after {elapsed:.1} s")
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        match e {
            CaseError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SurrogateError> for CliError {
    fn from(e: SurrogateError) -> Self {
        match e {
            SurrogateError::Solver { .. } => CliError::Convergence(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
