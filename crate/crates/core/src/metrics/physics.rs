use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MetricError, MetricRecord, PredictionSet, Quantity};
use crate::grid::{GridCase, NodeMap, Topology};
use crate::powerflow::Injections;

/// How the Joule-law residual compares losses with currents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JouleForm {
    /// `k · R · ā²`, the physical law.
    #[default]
    Squared,
    /// `R · ā`, as sometimes written without the square. For comparison only.
    Linear,
}

/// Tolerances and conventions of the physics measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsTolerances {
    /// A flow counts as non-null above this magnitude (A, MW, MVAr).
    pub nonnull: f64,
    /// Line losses count as negative below `−loss_sign` MW.
    pub loss_sign: f64,
    /// Accepted range of total losses over total production.
    pub loss_range: (f64, f64),
    /// Floor (MW) of the nodal injection used to normalize residuals.
    pub node_floor_mw: f64,
    /// Floor (MW) of the global balance used to normalize its residual.
    pub balance_floor_mw: f64,
    /// Phase multiplier `k` in `k · R · a²`.
    pub joule_constant: f64,
    pub joule_form: JouleForm,
}

impl Default for PhysicsTolerances {
    fn default() -> Self {
        Self {
            nonnull: 1e-6,
            loss_sign: 1e-6,
            loss_range: (0.005, 0.04),
            node_floor_mw: 0.1,
            balance_floor_mw: 0.1,
            joule_constant: 3.0,
            joule_form: JouleForm::Squared,
        }
    }
}

/// Topology and injections the predictions refer to, one entry per sample.
/// `prod_p` must hold the realized production (slack included).
#[derive(Debug, Clone, Copy)]
pub struct PhysicsContext<'a> {
    pub case: &'a GridCase,
    pub topologies: &'a [Topology],
    pub injections: &'a [Injections],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsReport {
    /// Share of negative currents over all lines, ends and samples.
    pub p1: f64,
    /// Share of negative voltages.
    pub p2: f64,
    /// Share of lines with negative losses.
    pub p3: f64,
    /// Share of disconnected-line entries with a non-null flow.
    pub p4: f64,
    /// Share of samples whose loss ratio leaves the accepted range.
    pub p5: f64,
    /// Mean relative residual of the global balance.
    pub p6: f64,
    /// Mean relative residual of the nodal active balance.
    pub p7: f64,
    /// Loss-weighted relative deviation from the Joule law.
    pub p8: f64,
    pub tolerances: PhysicsTolerances,
}

impl PhysicsReport {
    pub const NAMES: [&'static str; 8] = ["p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8"];

    pub fn values(&self) -> [f64; 8] {
        [self.p1, self.p2, self.p3, self.p4, self.p5, self.p6, self.p7, self.p8]
    }

    pub fn records(&self) -> Vec<MetricRecord> {
        Self::NAMES
            .iter()
            .zip(self.values())
            .map(|(name, value)| MetricRecord {
                name: name.to_string(),
                value,
                unit: "ratio".to_string(),
            })
            .collect()
    }
}

/// Per-sample tallies, reduced in sample order.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    negative_a: usize,
    negative_v: usize,
    negative_loss: usize,
    disconnected: usize,
    nonnull_disconnected: usize,
    loss_out_of_range: usize,
    balance_residual: f64,
    nodal_residual: f64,
    joule_deviation: f64,
    joule_losses: f64,
}

pub fn evaluate_physics(
    pred: &PredictionSet,
    ctx: &PhysicsContext<'_>,
    tol: &PhysicsTolerances,
) -> Result<PhysicsReport, MetricError> {
    evaluate_physics_batched(pred, ctx, tol, pred.n_samples().max(1))
}

/// Same result as [`evaluate_physics`] for every batch size: samples are
/// tallied independently and reduced in order.
pub fn evaluate_physics_batched(
    pred: &PredictionSet,
    ctx: &PhysicsContext<'_>,
    tol: &PhysicsTolerances,
    batch_size: usize,
) -> Result<PhysicsReport, MetricError> {
    let n = pred.n_samples();
    if ctx.topologies.len() != n || ctx.injections.len() != n {
        return Err(MetricError::MissingContext(format!(
            "{n} samples but {} topologies and {} injection sets",
            ctx.topologies.len(),
            ctx.injections.len()
        )));
    }
    if pred.n_lines() != ctx.case.n_lines() {
        return Err(MetricError::Shape(format!(
            "prediction has {} lines, the case {}",
            pred.n_lines(),
            ctx.case.n_lines()
        )));
    }
    for q in Quantity::REQUIRED {
        pred.require(q)?;
    }
    if n == 0 {
        return Err(MetricError::EmptySelection);
    }
    let batch_size = batch_size.max(1);
    let starts: Vec<usize> = (0..n).step_by(batch_size).collect();
    let tallies: Vec<Vec<Tally>> = starts
        .par_iter()
        .map(|&s| (s..(s + batch_size).min(n)).map(|i| tally(pred, ctx, tol, i)).collect())
        .collect();

    let mut total = Tally::default();
    let mut balance = 0.0;
    let mut nodal = 0.0;
    for t in tallies.iter().flatten() {
        total.negative_a += t.negative_a;
        total.negative_v += t.negative_v;
        total.negative_loss += t.negative_loss;
        total.disconnected += t.disconnected;
        total.nonnull_disconnected += t.nonnull_disconnected;
        total.loss_out_of_range += t.loss_out_of_range;
        balance += t.balance_residual;
        nodal += t.nodal_residual;
        total.joule_deviation += t.joule_deviation;
        total.joule_losses += t.joule_losses;
    }
    let lines = ctx.case.n_lines();
    let ends = (2 * lines * n) as f64;
    Ok(PhysicsReport {
        p1: total.negative_a as f64 / ends,
        p2: total.negative_v as f64 / ends,
        p3: total.negative_loss as f64 / (lines * n) as f64,
        p4: if total.disconnected == 0 {
            0.0
        } else {
            total.nonnull_disconnected as f64 / total.disconnected as f64
        },
        p5: total.loss_out_of_range as f64 / n as f64,
        p6: balance / n as f64,
        p7: nodal / n as f64,
        p8: if total.joule_losses > 0.0 {
            total.joule_deviation / total.joule_losses
        } else {
            total.joule_deviation
        },
        tolerances: *tol,
    })
}

/// Series resistance in ohms, referred to the origin side.
fn resistance_ohm(case: &GridCase, line: usize) -> f64 {
    let l = &case.lines()[line];
    let kv = case.substations()[l.from].base_kv;
    l.r * kv * kv / case.base_mva()
}

fn tally(pred: &PredictionSet, ctx: &PhysicsContext<'_>, tol: &PhysicsTolerances, s: usize) -> Tally {
    let case = ctx.case;
    let topo = &ctx.topologies[s];
    let inj = &ctx.injections[s];
    let row = |q| pred.row(q, s).expect("required quantity");
    let (a_or, a_ex, p_or, p_ex, v_or, v_ex) = (
        row(Quantity::AOr),
        row(Quantity::AEx),
        row(Quantity::POr),
        row(Quantity::PEx),
        row(Quantity::VOr),
        row(Quantity::VEx),
    );
    let flows: Vec<&[f64]> = Quantity::ALL
        .iter()
        .filter(|q| q.is_flow())
        .filter_map(|&q| pred.row(q, s))
        .collect();

    let mut t = Tally::default();
    t.negative_a = a_or.iter().chain(a_ex).filter(|&&a| a < 0.0).count();
    t.negative_v = v_or.iter().chain(v_ex).filter(|&&v| v < 0.0).count();

    let mut losses = 0.0;
    for l in 0..case.n_lines() {
        let loss = p_or[l] + p_ex[l];
        losses += loss;
        if loss < -tol.loss_sign {
            t.negative_loss += 1;
        }
        if !topo.line_status[l] {
            t.disconnected += 1;
            if flows.iter().any(|c| c[l].abs() > tol.nonnull) {
                t.nonnull_disconnected += 1;
            }
            continue;
        }
        let a = 0.5 * (a_or[l] + a_ex[l]);
        let r = resistance_ohm(case, l);
        let joule = match tol.joule_form {
            JouleForm::Squared => tol.joule_constant * r * a * a * 1e-6,
            JouleForm::Linear => r * a,
        };
        t.joule_deviation += (loss - joule).abs();
        t.joule_losses += loss.abs();
    }

    let nodes = NodeMap::from_topology(case, topo);
    let mut injection = vec![0.0; nodes.len()];
    let mut line_sum = vec![0.0; nodes.len()];
    // per-unit voltage seen at each node, for shunt conductances
    let mut vm = vec![f64::NAN; nodes.len()];
    for (g, gen) in case.generators().iter().enumerate() {
        if let Some(k) = nodes.node_of(topo, gen.substation, case.gen_pos(g)) {
            injection[k] += inj.prod_p[g];
        }
    }
    for (i, load) in case.loads().iter().enumerate() {
        if let Some(k) = nodes.node_of(topo, load.substation, case.load_pos(i)) {
            injection[k] -= inj.load_p[i];
        }
    }
    for l in 0..case.n_lines() {
        if let Some((k, m)) = nodes.line_nodes(case, topo, l) {
            line_sum[k] += p_or[l];
            line_sum[m] += p_ex[l];
            let line = &case.lines()[l];
            vm[k] = v_or[l] / case.substations()[line.from].base_kv;
            vm[m] = v_ex[l] / case.substations()[line.to].base_kv;
        }
    }
    let mut shunt = 0.0;
    for (sub, st) in case.substations().iter().enumerate() {
        if st.shunt_g_mw != 0.0 {
            if let Some(k) = nodes.node(sub, 1) {
                let v = if vm[k].is_finite() { vm[k] } else { 1.0 };
                let g = st.shunt_g_mw * v * v;
                injection[k] -= g;
                shunt += g;
            }
        }
    }

    let prod: f64 = inj.prod_p.iter().sum();
    let load: f64 = inj.load_p.iter().sum::<f64>() + shunt;
    let ratio = if prod > 0.0 { losses / prod } else { f64::NAN };
    if !(ratio >= tol.loss_range.0 && ratio <= tol.loss_range.1) {
        t.loss_out_of_range = 1;
    }
    let balance = prod - load;
    t.balance_residual = (balance - losses).abs() / balance.abs().max(tol.balance_floor_mw);

    if !nodes.is_empty() {
        let sum: f64 = injection
            .iter()
            .zip(&line_sum)
            .map(|(inj, flow)| (inj - flow).abs() / inj.abs().max(tol.node_floor_mw))
            .sum();
        t.nodal_residual = sum / nodes.len() as f64;
    }
    t
}
