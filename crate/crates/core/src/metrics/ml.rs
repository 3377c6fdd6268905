use serde::{Deserialize, Serialize};

use super::{MetricError, MetricRecord, PredictionSet, Quantity};

/// A MAPE value with the bookkeeping of its selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub value: f64,
    /// Entries that entered the mean.
    pub used: usize,
    /// Selected entries dropped because their truth is exactly zero.
    pub zero_excluded: usize,
}

fn same_len(pred: &[f64], truth: &[f64]) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::Shape(format!(
            "prediction has {} values, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn mean_relative(pairs: impl Iterator<Item = (f64, f64)>) -> Result<Mape, MetricError> {
    let (mut sum, mut used, mut zero_excluded) = (0.0, 0usize, 0usize);
    let mut any = false;
    for (p, t) in pairs {
        any = true;
        if t == 0.0 {
            zero_excluded += 1;
            continue;
        }
        sum += ((p - t) / t).abs();
        used += 1;
    }
    if !any || used == 0 {
        return Err(MetricError::EmptySelection);
    }
    Ok(Mape {
        value: sum / used as f64,
        used,
        zero_excluded,
    })
}

/// Mean of `|p − t| / |t|` over all entries with nonzero truth.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<Mape, MetricError> {
    same_len(pred, truth)?;
    mean_relative(pred.iter().copied().zip(truth.iter().copied()))
}

/// Linear-interpolation quantile of sorted data (`level` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// MAPE over the entries whose `|truth|` reaches the `(1 − q)` quantile of
/// `|truth|`: `q = 0.1` keeps the top decile, `q = 0.9` drops the bottom one.
pub fn mape_top_quantile(pred: &[f64], truth: &[f64], q: f64) -> Result<Mape, MetricError> {
    same_len(pred, truth)?;
    if truth.is_empty() {
        return Err(MetricError::EmptySelection);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(MetricError::Shape(format!("quantile fraction {q} outside [0, 1]")));
    }
    let mut mags: Vec<f64> = truth.iter().map(|t| t.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let cutoff = quantile_sorted(&mags, 1.0 - q);
    mean_relative(
        pred.iter()
            .zip(truth)
            .filter(|(_, t)| t.abs() >= cutoff)
            .map(|(&p, &t)| (p, t)),
    )
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    same_len(pred, truth)?;
    if truth.is_empty() {
        return Err(MetricError::EmptySelection);
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / truth.len() as f64)
}

/// Accuracy metrics per quantity: MAPE90 on currents, MAPE10 on active
/// powers, MAE (kV) on voltages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlReport {
    pub mape90_a_or: f64,
    pub mape90_a_ex: f64,
    pub mape10_p_or: f64,
    pub mape10_p_ex: f64,
    pub mae_v_or: f64,
    pub mae_v_ex: f64,
}

impl MlReport {
    pub const NAMES: [&'static str; 6] = [
        "mape90_a_or",
        "mape90_a_ex",
        "mape10_p_or",
        "mape10_p_ex",
        "mae_v_or",
        "mae_v_ex",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.mape90_a_or,
            self.mape90_a_ex,
            self.mape10_p_or,
            self.mape10_p_ex,
            self.mae_v_or,
            self.mae_v_ex,
        ]
    }

    pub fn records(&self) -> Vec<MetricRecord> {
        Self::NAMES
            .iter()
            .zip(self.values())
            .enumerate()
            .map(|(i, (name, value))| MetricRecord {
                name: name.to_string(),
                value,
                unit: if i < 4 { "ratio" } else { "kV" }.to_string(),
            })
            .collect()
    }
}

pub fn evaluate_ml(pred: &PredictionSet, truth: &PredictionSet) -> Result<MlReport, MetricError> {
    pred.check_against(truth)?;
    let top = |q, frac| mape_top_quantile(pred.require(q)?, truth.require(q)?, frac).map(|m| m.value);
    let abs = |q| mae(pred.require(q)?, truth.require(q)?);
    Ok(MlReport {
        mape90_a_or: top(Quantity::AOr, 0.10)?,
        mape90_a_ex: top(Quantity::AEx, 0.10)?,
        mape10_p_or: top(Quantity::POr, 0.90)?,
        mape10_p_ex: top(Quantity::PEx, 0.90)?,
        mae_v_or: abs(Quantity::VOr)?,
        mae_v_ex: abs(Quantity::VEx)?,
    })
}
