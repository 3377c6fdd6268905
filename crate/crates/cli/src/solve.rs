use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};

use gridscreen_core::powerflow::LineFlows;
use gridscreen_core::scenario::{read_dataset, write_predictions};
use gridscreen_core::{
    batch_solve_with, load_case, solve_newton_raphson, BatchOptions, GridCase, Injections, PowerFlowError,
    PowerFlowSolution, PredictionSet, SolverOptions, Topology,
};

use crate::error::{CliError, Result};
use crate::manifest::{check_budget, InputRef, RunManifest};
use crate::{Engine, Globals};

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, default_value = "ieee118")]
    case: String,
    /// A dataset directory, or a text file with one scenario per line listing
    /// the disconnected line indices (`-` for none).
    #[arg(long, conflicts_with = "n1_all", required_unless_present = "n1_all")]
    scenarios: Option<PathBuf>,
    /// Every single-line outage of the reference topology.
    #[arg(long)]
    n1_all: bool,
    #[arg(long, value_enum, default_value_t = Engine::Batched)]
    engine: Engine,
    #[arg(long)]
    out: PathBuf,
}

/// Wall-clock of one solve run, the input of speed-up measurements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveTiming {
    pub engine: String,
    pub scenarios: usize,
    pub converged: usize,
    pub seconds: f64,
}

pub const TIMING: &str = "timing.json";

fn parse_scenario_file(case: &GridCase, path: &Path) -> Result<Vec<(Topology, Injections)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let reference = Topology::reference(case);
    let nominal = Injections::nominal(case);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut topo = reference.clone();
        if line != "-" {
            for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
                let l: usize = tok
                    .parse()
                    .map_err(|_| CliError::Validation(format!("{}:{}: bad line index {tok:?}", path.display(), i + 1)))?;
                if l >= case.n_lines() {
                    return Err(CliError::Validation(format!(
                        "{}:{}: line {l} out of range (case has {})",
                        path.display(),
                        i + 1,
                        case.n_lines()
                    )));
                }
                topo.line_status[l] = false;
            }
        }
        out.push((topo, nominal.clone()));
    }
    Ok(out)
}

fn load_scenarios(case: &GridCase, a: &SolveArgs) -> Result<Vec<(Topology, Injections)>> {
    if a.n1_all {
        let reference = Topology::reference(case);
        let nominal = Injections::nominal(case);
        return Ok((0..case.n_lines())
            .map(|l| {
                let mut t = reference.clone();
                t.line_status[l] = false;
                (t, nominal.clone())
            })
            .collect());
    }
    let path = a.scenarios.as_ref().expect("clap requires one source");
    if path.is_dir() {
        let ds = read_dataset(path)?;
        if ds.manifest.n_lines != case.n_lines() || ds.manifest.topo_len != case.topo_len() {
            return Err(CliError::Validation(format!("{} was generated for a different case", path.display())));
        }
        return Ok(ds.topologies.into_iter().zip(ds.injections).collect());
    }
    parse_scenario_file(case, path)
}

pub fn solve_all(
    case: &GridCase,
    scenarios: &[(Topology, Injections)],
    engine: Engine,
    jobs: Option<usize>,
) -> Vec<Result<PowerFlowSolution, PowerFlowError>> {
    let opts = SolverOptions::default();
    match engine {
        Engine::Sequential => scenarios.iter().map(|(t, i)| solve_newton_raphson(case, t, i, &opts)).collect(),
        Engine::Batched => {
            let bopts = BatchOptions {
                jobs,
                ..BatchOptions::default()
            };
            batch_solve_with(case, scenarios, &opts, &bopts).solutions
        }
    }
}

fn write_results(dir: &Path, case: &GridCase, results: &[Result<PowerFlowSolution, PowerFlowError>]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut failed = LineFlows::zeros(case.n_lines());
    for col in [
        &mut failed.a_or, &mut failed.a_ex, &mut failed.p_or, &mut failed.p_ex, &mut failed.q_or, &mut failed.q_ex,
        &mut failed.v_or, &mut failed.v_ex, &mut failed.theta_or, &mut failed.theta_ex,
    ] {
        col.fill(f64::NAN);
    }
    let flows = results.iter().map(|r| r.as_ref().map(|s| &s.lines).unwrap_or(&failed));
    let pred = PredictionSet::from_flows(case.n_lines(), flows);
    write_predictions(dir, &pred)?;

    let path = dir.join("status.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    w.write_record(["scenario", "converged", "iterations", "mismatch_pu", "error"])
        .map_err(|e| CliError::io(&path, e))?;
    for (i, r) in results.iter().enumerate() {
        let rec = match r {
            Ok(s) => [i.to_string(), "1".into(), s.iterations.to_string(), format!("{:e}", s.mismatch_norm), String::new()],
            Err(e) => [i.to_string(), "0".into(), String::new(), String::new(), e.to_string()],
        };
        w.write_record(rec).map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join("nodes.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    w.write_record(["scenario", "substation", "busbar", "vm_pu", "va_rad"])
        .map_err(|e| CliError::io(&path, e))?;
    for (i, s) in results.iter().enumerate().filter_map(|(i, r)| r.as_ref().ok().map(|s| (i, s))) {
        for (k, &(sub, bus)) in s.state.nodes.nodes().iter().enumerate() {
            w.write_record([
                i.to_string(),
                sub.to_string(),
                bus.to_string(),
                format!("{:e}", s.state.vm[k]),
                format!("{:e}", s.state.va[k]),
            ])
            .map_err(|e| CliError::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

pub fn run(a: &SolveArgs, g: &Globals) -> Result<()> {
    let mut run = RunManifest::start("solve");
    let case = load_case(&a.case)?;
    run.case = Some(InputRef::case(&a.case, &case)?);
    let scenarios = load_scenarios(&case, a)?;
    if scenarios.is_empty() {
        eprintln!("warning: no scenarios to solve");
        return Ok(());
    }
    let start = Instant::now();
    let results = run.phase("solve", || solve_all(&case, &scenarios, a.engine, g.jobs));
    let seconds = start.elapsed().as_secs_f64();
    check_budget(&run, g.budget)?;
    run.phase("write", || write_results(&a.out, &case, &results))?;

    let converged = results.iter().filter(|r| r.is_ok()).count();
    let timing = SolveTiming {
        engine: format!("{:?}", a.engine).to_lowercase(),
        scenarios: scenarios.len(),
        converged,
        seconds,
    };
    let path = a.out.join(TIMING);
    fs::write(&path, serde_json::to_string_pretty(&timing).expect("timing serializes") + "\n")
        .map_err(|e| CliError::io(&path, e))?;
    run.write(&a.out)?;

    eprintln!("{converged}/{} scenarios converged in {seconds:.3} s", scenarios.len());
    let failures: Vec<String> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| format!("scenario {i}: {e}")))
        .collect();
    for f in &failures {
        eprintln!("  {f}");
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Convergence(format!("{} of {} scenarios failed", failures.len(), scenarios.len())))
    }
}
