use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use gridscreen_core::grid::to_native_json;
use gridscreen_core::scenario::Seeds;
use gridscreen_core::GridCase;

use crate::error::{CliError, Result};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, Serialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
}

impl InputRef {
    pub fn file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    /// Bundled cases are hashed through their canonical JSON form.
    pub fn case(name_or_path: &str, case: &GridCase) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.is_file() {
            return Self::file(path);
        }
        Ok(Self {
            path: name_or_path.to_string(),
            sha256: hex::encode(Sha256::digest(to_native_json(case).as_bytes())),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

/// Provenance of one command run, written once per output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub config: Option<InputRef>,
    pub case: Option<InputRef>,
    pub seeds: Option<Seeds>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub phases: Vec<Phase>,
    #[serde(skip)]
    clock: Option<Instant>,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: None,
            case: None,
            seeds: None,
            started_unix: unix_now(),
            finished_unix: 0.0,
            phases: Vec::new(),
            clock: Some(Instant::now()),
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.clock.map(|c| c.elapsed().as_secs_f64()).unwrap_or(0.0)
    }

    /// Runs `f` as a named phase and records its wall-clock time.
    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.phases.push(Phase {
            name: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

/// Aborts once the run has used more than `budget` seconds.
pub fn check_budget(run: &RunManifest, budget: Option<f64>) -> Result<()> {
    match budget {
        Some(limit) if run.elapsed() > limit => Err(CliError::Budget {
            limit,
            elapsed: run.elapsed(),
        }),
        _ => Ok(()),
    }
}
