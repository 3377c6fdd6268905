use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{stream_id, InjectionParams, Region, ScenarioConfig, SetBus, Split, StageParams};
use super::ScenarioError;
use crate::grid::{validate_topology, GridCase, Topology, TopologyAction};
use crate::powerflow::Injections;

/// Independent topology and injection streams of one split.
#[derive(Debug, Clone)]
pub struct SplitRng {
    pub topology: ChaCha8Rng,
    pub injections: ChaCha8Rng,
}

impl SplitRng {
    pub fn new(cfg: &ScenarioConfig, split: Split) -> Self {
        let (env, actor) = cfg.seeds.of(split);
        let mut topology = ChaCha8Rng::seed_from_u64(actor);
        topology.set_stream(stream_id(split, false));
        let mut injections = ChaCha8Rng::seed_from_u64(env);
        injections.set_stream(stream_id(split, true));
        Self { topology, injections }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Indices into the configured reference actions, in application order.
    pub reference_actions: Vec<usize>,
    /// Disconnected lines, ascending.
    pub disconnected: Vec<usize>,
    pub topology: Topology,
    /// Drawn setpoints.
    pub injections: Injections,
}

/// Precomputed sampling state for one split.
#[derive(Debug, Clone)]
pub struct ScenarioSampler<'a> {
    case: &'a GridCase,
    cfg: &'a ScenarioConfig,
    split: Split,
    reference: StageParams,
    /// Line-to-line hop distance when the split has a region.
    line_hops: Option<Vec<Vec<usize>>>,
    /// Lines eligible for disconnection in the scenario stage.
    pool: Vec<usize>,
}

/// Hop distance between the nearest ends of two lines.
fn line_distances(case: &GridCase) -> Vec<Vec<usize>> {
    let d = case.substation_distances();
    let ends: Vec<[usize; 2]> = case.lines().iter().map(|l| [l.from, l.to]).collect();
    ends.iter()
        .map(|a| {
            ends.iter()
                .map(|b| a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).map(|(x, y)| d[x][y]).min().unwrap())
                .collect()
        })
        .collect()
}

fn region_pool(case: &GridCase, region: &Region) -> Vec<usize> {
    if region.substations.is_empty() {
        return (0..case.n_lines()).collect();
    }
    let d = case.substation_distances();
    (0..case.n_lines())
        .filter(|&l| {
            let line = &case.lines()[l];
            region
                .substations
                .iter()
                .any(|&s| d[s][line.from] <= region.hops || d[s][line.to] <= region.hops)
        })
        .collect()
}

/// Whether a set of lines pairwise lies within `hops`.
pub fn lines_in_region(case: &GridCase, region: &Region, lines: &[usize]) -> bool {
    let pool = region_pool(case, region);
    if lines.iter().any(|l| !pool.contains(l)) {
        return false;
    }
    let d = line_distances(case);
    lines
        .iter()
        .enumerate()
        .all(|(i, &a)| lines[i + 1..].iter().all(|&b| d[a][b] <= region.hops))
}

fn weighted(probs: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(probs.iter().copied()).expect("validated probability vector")
}

struct Draw {
    actions: Vec<usize>,
    lines: Vec<usize>,
}

impl<'a> ScenarioSampler<'a> {
    pub fn new(case: &'a GridCase, cfg: &'a ScenarioConfig, split: Split) -> Result<Self, ScenarioError> {
        cfg.validate(Some(case))?;
        let params = cfg.params(split);
        let (line_hops, pool) = match &params.region {
            Some(r) => (Some(line_distances(case)), region_pool(case, r)),
            None => (None, (0..case.n_lines()).collect()),
        };
        let need = if params.prob_type[1] > 0.0 { params.max_depth().min(params.max_disc) } else { 0 };
        if pool.len() < need {
            return Err(ScenarioError::Unsatisfiable {
                split,
                reason: format!("region holds {} lines but depth {need} is required", pool.len()),
            });
        }
        Ok(Self {
            case,
            cfg,
            split,
            reference: cfg.reference_args.params(),
            line_hops,
            pool,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Draws one stage on top of `base`; `None` marks an illegal combination.
    fn stage(
        &self,
        rng: &mut ChaCha8Rng,
        params: &StageParams,
        actions: &[SetBus],
        disconnected: &[usize],
        max_disc: usize,
        scenario_stage: bool,
    ) -> Option<Draw> {
        let mut draw = Draw {
            actions: Vec::new(),
            lines: Vec::new(),
        };
        if rng.random_bool(params.prob_do_nothing) {
            return Some(draw);
        }
        let depth = 1 + weighted(&params.prob_depth).sample(rng);
        let types = weighted(&params.prob_type);
        let n_bus = (0..depth).filter(|_| types.sample(rng) == 0).count();
        let n_line = depth - n_bus;
        if n_bus > actions.len() || disconnected.len() + n_line > max_disc {
            return None;
        }
        draw.actions = index::sample(rng, actions.len(), n_bus).into_vec();
        let mut subs: Vec<usize> = draw.actions.iter().map(|&a| actions[a].substation).collect();
        subs.sort_unstable();
        if subs.windows(2).any(|w| w[0] == w[1]) {
            return None;
        }
        let region = if scenario_stage { params.region.as_ref() } else { None };
        for _ in 0..n_line {
            let candidates: Vec<usize> = self
                .pool
                .iter()
                .copied()
                .filter(|l| !disconnected.contains(l) && !draw.lines.contains(l))
                .filter(|&l| match (region, &self.line_hops) {
                    (Some(r), Some(d)) => draw.lines.iter().chain(disconnected).all(|&m| d[l][m] <= r.hops),
                    _ => true,
                })
                .collect();
            if candidates.is_empty() {
                return None;
            }
            draw.lines.push(candidates[rng.random_range(0..candidates.len())]);
        }
        Some(draw)
    }

    fn apply(&self, topo: &Topology, actions: &[usize], lines: &[usize]) -> Option<Topology> {
        let mut t = topo.clone();
        for &a in actions {
            t = t.apply(self.case, &self.cfg.reference_args.topo_actions[a].action()).ok()?;
        }
        for &l in lines {
            t = t.apply(self.case, &TopologyAction::DisconnectLine(l)).ok()?;
        }
        Some(t)
    }

    /// Two-stage topology draw with rejection of invalid combinations.
    pub fn sample_topology(&self, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>, Topology), ScenarioError> {
        let params = self.cfg.params(self.split);
        let reference_actions = &self.cfg.reference_args.topo_actions;
        let start = Topology::reference(self.case);
        for _ in 0..self.cfg.generation.max_redraws {
            let Some(a) = self.stage(rng, &self.reference, reference_actions, &[], self.reference.max_disc, false) else {
                continue;
            };
            let Some(b) = self.stage(rng, params, reference_actions, &a.lines, params.max_disc, true) else {
                continue;
            };
            let mut actions = a.actions;
            let busy: Vec<usize> = actions.iter().map(|&i| reference_actions[i].substation).collect();
            if b.actions.iter().any(|&i| busy.contains(&reference_actions[i].substation)) {
                continue;
            }
            actions.extend(b.actions);
            let mut lines = a.lines;
            lines.extend(b.lines);
            let Some(topo) = self.apply(&start, &actions, &lines) else { continue };
            if !validate_topology(self.case, &topo).is_valid() {
                continue;
            }
            lines.sort_unstable();
            return Ok((actions, lines, topo));
        }
        Err(ScenarioError::Unsatisfiable {
            split: self.split,
            reason: format!("no valid topology after {} attempts", self.cfg.generation.max_redraws),
        })
    }

    pub fn sample(&self, rng: &mut SplitRng) -> Result<Scenario, ScenarioError> {
        let (reference_actions, disconnected, topology) = self.sample_topology(&mut rng.topology)?;
        let injections = sample_injections(&mut rng.injections, self.case, &self.cfg.injections);
        Ok(Scenario {
            reference_actions,
            disconnected,
            topology,
            injections,
        })
    }
}

/// One scenario from a fresh sampler. Prefer [`ScenarioSampler`] in loops.
pub fn sample_scenario(
    rng: &mut SplitRng,
    case: &GridCase,
    cfg: &ScenarioConfig,
    split: Split,
) -> Result<Scenario, ScenarioError> {
    ScenarioSampler::new(case, cfg, split)?.sample(rng)
}

pub fn sample_injections(rng: &mut ChaCha8Rng, case: &GridCase, p: &InjectionParams) -> Injections {
    let nominal = Injections::nominal(case);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let shift = 0.5 * (p.load_sigma_global.powi(2) + p.load_sigma_local.powi(2));
    let common = p.load_sigma_global * normal(rng);
    let mut load_p = Vec::with_capacity(nominal.load_p.len());
    let mut load_q = Vec::with_capacity(nominal.load_q.len());
    for (lp, lq) in nominal.load_p.iter().zip(&nominal.load_q) {
        let m = (common + p.load_sigma_local * normal(rng) - shift).exp();
        load_p.push(lp * m);
        load_q.push(lq * m);
    }
    let total: f64 = nominal.load_p.iter().sum();
    let ratio = if total.abs() > 0.0 { load_p.iter().sum::<f64>() / total } else { 1.0 };
    let prod_p = nominal.prod_p.iter().map(|g| g * ratio).collect();
    let prod_v = nominal.prod_v.iter().map(|v| v * (1.0 + p.prod_v_sigma * normal(rng))).collect();
    Injections {
        prod_p,
        prod_v,
        load_p,
        load_q,
    }
}
