use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, Split};
use super::sample::{Scenario, ScenarioSampler, SplitRng};
use super::ScenarioError;
use crate::grid::{build_ybus, GridCase};
use crate::metrics::PredictionSet;
use crate::powerflow::{solve_newton_raphson, Injections, LineFlows, NodeKind, PowerFlowError, PowerFlowSolution, SolverOptions};

/// Sparse admittance matrix and complex nodal injections of a solved sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsAttributes {
    /// `(row, col, Y)` in row-major order, per-unit.
    pub ybus: Vec<(usize, usize, Complex64)>,
    /// `V · conj(Y V)` at the solution, per-unit.
    pub sbus: Vec<Complex64>,
    pub pv_nodes: Vec<usize>,
    pub slack: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scenario: Scenario,
    /// Drawn setpoints with `prod_p` replaced by the realized generation.
    pub injections: Injections,
    pub flows: LineFlows,
    pub physics: Option<PhysicsAttributes>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    /// (injection seed, topology seed).
    pub seeds: (u64, u64),
    pub config_hash: String,
    pub samples: Vec<Sample>,
    /// Draws discarded because the solver failed or the loss screen rejected them.
    pub redraws: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn topologies(&self) -> Vec<crate::grid::Topology> {
        self.samples.iter().map(|s| s.scenario.topology.clone()).collect()
    }

    pub fn injections(&self) -> Vec<Injections> {
        self.samples.iter().map(|s| s.injections.clone()).collect()
    }

    pub fn outputs(&self, case: &GridCase) -> PredictionSet {
        PredictionSet::from_flows(case.n_lines(), self.samples.iter().map(|s| &s.flows))
    }
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    pub solver: SolverOptions,
    /// Overrides the configured sample count.
    pub samples: Option<usize>,
    /// Worker threads for the solves; `None` uses the global pool.
    pub jobs: Option<usize>,
}

pub fn physics_attributes(case: &GridCase, scenario: &Scenario, sol: &PowerFlowSolution) -> PhysicsAttributes {
    let y = build_ybus(case, &scenario.topology).expect("topology was validated");
    let v = sol.state.phasors();
    let ibus = y.matrix.mul_vec(&v);
    PhysicsAttributes {
        ybus: y.matrix.iter().collect(),
        sbus: v.iter().zip(&ibus).map(|(v, i)| v * i.conj()).collect(),
        pv_nodes: (0..sol.state.kinds.len()).filter(|&k| sol.state.kinds[k] == NodeKind::Pv).collect(),
        slack: sol.state.kinds.iter().position(|k| *k == NodeKind::Slack).unwrap_or(0),
    }
}

fn into_sample(case: &GridCase, scenario: Scenario, sol: PowerFlowSolution, physics: bool) -> Sample {
    let physics = physics.then(|| physics_attributes(case, &scenario, &sol));
    let mut injections = scenario.injections.clone();
    injections.prod_p.clone_from(&sol.generators.p_mw);
    Sample {
        scenario,
        injections,
        flows: sol.lines,
        physics,
    }
}

/// Total line losses over total realized production.
pub fn loss_ratio(sol: &PowerFlowSolution) -> f64 {
    let losses: f64 = sol.lines.p_or.iter().zip(&sol.lines.p_ex).map(|(a, b)| a + b).sum();
    losses / sol.generators.p_mw.iter().sum::<f64>()
}

pub fn generate_dataset(case: &GridCase, cfg: &ScenarioConfig, split: Split) -> Result<Dataset, ScenarioError> {
    generate_dataset_with(case, cfg, split, &GenerateOptions::default())
}

/// Draws every scenario from the split's streams in order, solves them in
/// parallel and redraws failed or screened-out samples in ascending index
/// order until all are accepted.
pub fn generate_dataset_with(
    case: &GridCase,
    cfg: &ScenarioConfig,
    split: Split,
    opts: &GenerateOptions,
) -> Result<Dataset, ScenarioError> {
    let sampler = ScenarioSampler::new(case, cfg, split)?;
    let n = opts.samples.unwrap_or(cfg.samples.of(split));
    let mut rng = SplitRng::new(cfg, split);
    let mut scenarios = (0..n).map(|_| sampler.sample(&mut rng)).collect::<Result<Vec<_>, _>>()?;
    let solve = |s: &Scenario| solve_newton_raphson(case, &s.topology, &s.injections, &opts.solver);
    let run = |scenarios: &[Scenario], idx: &[usize]| -> Vec<Result<PowerFlowSolution, PowerFlowError>> {
        let work = || idx.par_iter().map(|&i| solve(&scenarios[i])).collect();
        match opts.jobs.and_then(|j| rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build().ok()) {
            Some(pool) => pool.install(work),
            None => work(),
        }
    };
    let loss_ok = |sol: &PowerFlowSolution| match cfg.generation.loss_range {
        None => true,
        Some([lo, hi]) => {
            let r = loss_ratio(sol);
            r >= lo && r <= hi
        }
    };
    let mut solutions: Vec<Option<PowerFlowSolution>> = vec![None; n];
    let mut pending: Vec<usize> = (0..n).collect();
    let mut attempts = vec![0usize; n];
    let mut redraws = 0;
    while !pending.is_empty() {
        let results = run(&scenarios, &pending);
        let mut failed = Vec::new();
        for (&i, r) in pending.iter().zip(results) {
            match r {
                Ok(sol) if loss_ok(&sol) => solutions[i] = Some(sol),
                Ok(_) => {
                    log::debug!("{split} sample {i}: losses outside the accepted range; redrawing");
                    failed.push(i);
                }
                Err(e) => {
                    log::debug!("{split} sample {i}: {e}; redrawing");
                    failed.push(i);
                }
            }
        }
        for &i in &failed {
            attempts[i] += 1;
            if attempts[i] >= cfg.generation.max_redraws {
                return Err(ScenarioError::Unsatisfiable {
                    split,
                    reason: format!("sample {i} was rejected {} times", attempts[i]),
                });
            }
            scenarios[i] = sampler.sample(&mut rng)?;
            redraws += 1;
        }
        pending = failed;
    }
    if redraws > 0 {
        log::info!("{split}: {redraws} draws replaced after solver failures");
    }
    let samples = scenarios
        .into_iter()
        .zip(solutions)
        .map(|(s, sol)| into_sample(case, s, sol.expect("every sample solved"), cfg.generation.store_physics))
        .collect();
    Ok(Dataset {
        split,
        seeds: cfg.seeds.of(split),
        config_hash: cfg.fingerprint(),
        samples,
        redraws,
    })
}
