use std::path::PathBuf;

use clap::Args;

use gridscreen_core::scenario::{generate_dataset_with, write_dataset, GenerateOptions, ScenarioConfig, Split};
use gridscreen_core::load_case;

use crate::error::{CliError, Result};
use crate::manifest::{check_budget, InputRef, RunManifest};
use crate::Globals;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scenario config (TOML); the bundled desk config when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `ieee14`, `ieee118` or a MATPOWER / JSON case file.
    #[arg(long, default_value = "ieee118")]
    case: String,
    #[arg(long)]
    out: PathBuf,
    /// Replace the eight configured seeds by base..base+7.
    #[arg(long)]
    seed: Option<u64>,
    /// Samples per split, overriding the config.
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated subset of train,val,test,test_ood.
    #[arg(long, value_delimiter = ',')]
    splits: Vec<Split>,
}

pub fn run(a: &GenerateArgs, g: &Globals) -> Result<()> {
    let mut run = RunManifest::start("generate");
    let case = load_case(&a.case)?;
    let mut cfg = match &a.config {
        Some(p) => {
            run.config = Some(InputRef::file(p)?);
            ScenarioConfig::from_path(p)?
        }
        None => ScenarioConfig::desk(),
    };
    if let Some(s) = a.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(n) = a.samples {
        if n == 0 {
            return Err(CliError::Validation("--samples must be positive".into()));
        }
        cfg = cfg.with_samples(n);
    }
    cfg.validate(Some(&case))?;
    run.case = Some(InputRef::case(&a.case, &case)?);
    run.seeds = Some(cfg.seeds);
    let splits = if a.splits.is_empty() { Split::ALL.to_vec() } else { a.splits.clone() };
    let opts = GenerateOptions {
        jobs: g.jobs,
        ..GenerateOptions::default()
    };
    for split in splits {
        let ds = run.phase(&format!("generate {split}"), || generate_dataset_with(&case, &cfg, split, &opts))?;
        let manifest = write_dataset(&a.out.join(split.name()), &ds, &case)?;
        eprintln!("{split}: {} samples, {} redraws", manifest.n_samples, manifest.redraws);
        check_budget(&run, g.budget)?;
    }
    run.write(&a.out)
}
