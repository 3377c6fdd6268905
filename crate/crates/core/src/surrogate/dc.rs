use rayon::prelude::*;

use super::{Capabilities, InputBatch, Surrogate, SurrogateError};
use crate::metrics::{PredictionSet, Quantity};
use crate::powerflow::{dc_power_flow, LineFlows, SQRT_3};

/// Physics-light reference point: DC active flows, mean training voltages,
/// currents from both.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DcBaseline {
    /// Mean training voltage (kV) at each line end, over samples where the
    /// line was in service.
    v_or: Vec<f64>,
    v_ex: Vec<f64>,
}

impl DcBaseline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_fitted(&self) -> bool {
        !self.v_or.is_empty()
    }
}

fn end_means(values: &[f64], n_lines: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n_lines];
    let mut count = vec![0usize; n_lines];
    for row in values.chunks_exact(n_lines) {
        for (l, &v) in row.iter().enumerate() {
            if v > 0.0 {
                sum[l] += v;
                count[l] += 1;
            }
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
}

impl Surrogate for DcBaseline {
    fn name(&self) -> &str {
        "dc-baseline"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            injections: true,
            topology: true,
            physics: false,
        }
    }

    fn fit(&mut self, inputs: &InputBatch<'_>, outputs: &PredictionSet) -> Result<(), SurrogateError> {
        inputs.check()?;
        let n = inputs.case.n_lines();
        if outputs.n_lines() != n || outputs.n_samples() != inputs.len() {
            return Err(SurrogateError::Dimension(format!(
                "outputs hold {} samples of {} lines, inputs {} samples of {n} lines",
                outputs.n_samples(),
                outputs.n_lines(),
                inputs.len()
            )));
        }
        self.v_or = end_means(outputs.require(Quantity::VOr)?, n);
        self.v_ex = end_means(outputs.require(Quantity::VEx)?, n);
        Ok(())
    }

    fn predict(&self, inputs: &InputBatch<'_>) -> Result<PredictionSet, SurrogateError> {
        if !self.is_fitted() {
            return Err(SurrogateError::NotFitted);
        }
        inputs.check()?;
        let case = inputs.case;
        let base = case.base_mva();
        let flows = (0..inputs.len())
            .into_par_iter()
            .map(|i| {
                let topo = &inputs.topologies[i];
                let dc = dc_power_flow(case, topo, &inputs.injections[i])
                    .map_err(|source| SurrogateError::Solver { sample: i, source })?;
                let mut f = LineFlows::zeros(case.n_lines());
                for (l, line) in case.lines().iter().enumerate() {
                    let Some((k, m)) = dc.nodes.line_nodes(case, topo, l) else {
                        continue;
                    };
                    let p = if line.x == 0.0 {
                        0.0
                    } else {
                        base * (dc.angles[k] - dc.angles[m]) / (line.x * line.tap)
                    };
                    f.p_or[l] = p;
                    f.p_ex[l] = -p;
                    f.v_or[l] = self.v_or[l];
                    f.v_ex[l] = self.v_ex[l];
                    f.theta_or[l] = dc.angles[k];
                    f.theta_ex[l] = dc.angles[m];
                    let amps = |v: f64| if v > 0.0 { 1000.0 * p.abs() / (SQRT_3 * v) } else { 0.0 };
                    f.a_or[l] = amps(self.v_or[l]);
                    f.a_ex[l] = amps(self.v_ex[l]);
                }
                Ok(f)
            })
            .collect::<Result<Vec<_>, SurrogateError>>()?;
        Ok(PredictionSet::from_flows(case.n_lines(), &flows))
    }
}
