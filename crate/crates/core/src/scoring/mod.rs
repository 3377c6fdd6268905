//! Discretized multi-criteria scoring of a surrogate.
//!
//! Each metric is graded against an (inferior, superior) threshold pair,
//! grades are averaged into per-category sub-scores, and the test, OOD and
//! speed-up sub-scores are combined linearly into the global score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MlReport, PhysicsReport};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScoreError {
    #[error("metric {name} has invalid value {value}")]
    InvalidMetric { name: String, value: f64 },
    #[error("thresholds must satisfy 0 < inferior < superior, got ({inferior}, {superior})")]
    InvalidThresholds { inferior: f64, superior: f64 },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("no grades to aggregate")]
    EmptyGrades,
    #[error("speed-up inputs must be positive, got {0}")]
    InvalidSpeedup(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Unacceptable = 0,
    Acceptable = 1,
    Great = 2,
}

impl Grade {
    pub fn points(self) -> u32 {
        self as u32
    }

    /// Single-letter rendering for tables.
    pub fn symbol(self) -> char {
        match self {
            Grade::Great => 'G',
            Grade::Acceptable => 'A',
            Grade::Unacceptable => 'U',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub inferior: f64,
    pub superior: f64,
}

impl Thresholds {
    pub const fn new(inferior: f64, superior: f64) -> Self {
        Self { inferior, superior }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.inferior > 0.0 && self.inferior < self.superior && self.superior.is_finite() {
            Ok(())
        } else {
            Err(ScoreError::InvalidThresholds {
                inferior: self.inferior,
                superior: self.superior,
            })
        }
    }
}

/// Thresholds in the metrics' own units: fractions for MAPEs and physics
/// proportions, kV for voltage MAEs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    /// In [`MlReport::NAMES`] order.
    pub ml: [Thresholds; 6],
    /// P1 to P8.
    pub physics: [Thresholds; 8],
}

impl Default for ThresholdTable {
    fn default() -> Self {
        let mape = Thresholds::new(0.02, 0.05);
        let volt = Thresholds::new(0.2, 0.5);
        let basic = Thresholds::new(0.01, 0.05);
        let law = Thresholds::new(0.05, 0.10);
        Self {
            ml: [mape, mape, mape, mape, volt, volt],
            physics: [basic, basic, basic, basic, basic, law, law, basic],
        }
    }
}

impl ThresholdTable {
    pub fn validate(&self) -> Result<(), ScoreError> {
        self.ml.iter().chain(&self.physics).try_for_each(Thresholds::validate)
    }
}

/// Grades one value; a value equal to a threshold gets the better grade.
pub fn discretize(value: f64, thresholds: &Thresholds) -> Result<Grade, ScoreError> {
    thresholds.validate()?;
    if !(value >= 0.0) || !value.is_finite() {
        return Err(ScoreError::InvalidMetric {
            name: "value".into(),
            value,
        });
    }
    Ok(if value <= thresholds.inferior {
        Grade::Great
    } else if value <= thresholds.superior {
        Grade::Acceptable
    } else {
        Grade::Unacceptable
    })
}

/// `(2 N_great + N_acceptable) / 2N`.
pub fn subscore(grades: &[Grade]) -> Result<f64, ScoreError> {
    if grades.is_empty() {
        return Err(ScoreError::EmptyGrades);
    }
    let points: u32 = grades.iter().map(|g| g.points()).sum();
    Ok(points as f64 / (2 * grades.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub test: f64,
    pub ood: f64,
    pub speedup: f64,
    pub ml: f64,
    pub physics: f64,
    /// Weibull shape.
    pub weibull_b: f64,
    /// Speed-up that scores 0.1.
    pub weibull_c: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            test: 0.30,
            ood: 0.30,
            speedup: 0.40,
            ml: 0.66,
            physics: 0.34,
            weibull_b: 1.7,
            weibull_c: 5.0,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let all = [self.test, self.ood, self.speedup, self.ml, self.physics];
        if all.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(ScoreError::InvalidWeights("weights must lie in [0, 1]".into()));
        }
        if ((self.test + self.ood + self.speedup) - 1.0).abs() > 1e-9 {
            return Err(ScoreError::InvalidWeights("test + ood + speedup must equal 1".into()));
        }
        if ((self.ml + self.physics) - 1.0).abs() > 1e-9 {
            return Err(ScoreError::InvalidWeights("ml + physics must equal 1".into()));
        }
        if !(self.weibull_b > 0.0 && self.weibull_c > 0.0) {
            return Err(ScoreError::InvalidWeights("Weibull b and c must be positive".into()));
        }
        Ok(())
    }

    /// Scale `a = c · (−ln 0.9)^(−1/b)`.
    pub fn weibull_a(&self) -> f64 {
        self.weibull_c * (-(0.9f64).ln()).powf(-1.0 / self.weibull_b)
    }
}

/// `min(1 − exp(−(ratio/a)^b), 1)`.
pub fn speedup_score(ratio: f64, weights: &ScoreWeights) -> Result<f64, ScoreError> {
    if !(ratio > 0.0) || ratio.is_nan() {
        return Err(ScoreError::InvalidSpeedup(ratio));
    }
    let a = weights.weibull_a();
    let s = 1.0 - (-(ratio / a).powf(weights.weibull_b)).exp();
    Ok(s.clamp(0.0, 1.0))
}

pub fn measure_speedup(baseline_secs: f64, inference_secs: f64) -> Result<f64, ScoreError> {
    for t in [baseline_secs, inference_secs] {
        if !(t > 0.0) || !t.is_finite() {
            return Err(ScoreError::InvalidSpeedup(t));
        }
    }
    Ok(baseline_secs / inference_secs)
}

/// Grades and sub-scores of one evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub ml_grades: Vec<Grade>,
    pub physics_grades: Vec<Grade>,
    pub ml: f64,
    pub physics: f64,
    /// `α_ML · ml + α_Physics · physics`.
    pub combined: f64,
}

impl SplitScore {
    pub fn from_grades(ml_grades: Vec<Grade>, physics_grades: Vec<Grade>, w: &ScoreWeights) -> Result<Self, ScoreError> {
        let ml = subscore(&ml_grades)?;
        let physics = subscore(&physics_grades)?;
        Ok(Self {
            combined: w.ml * ml + w.physics * physics,
            ml_grades,
            physics_grades,
            ml,
            physics,
        })
    }

    pub fn from_reports(ml: &MlReport, ph: &PhysicsReport, w: &ScoreWeights, t: &ThresholdTable) -> Result<Self, ScoreError> {
        let grade = |names: &[&str], values: &[f64], th: &[Thresholds]| -> Result<Vec<Grade>, ScoreError> {
            names
                .iter()
                .zip(values)
                .zip(th)
                .map(|((n, &v), th)| {
                    discretize(v, th).map_err(|e| match e {
                        ScoreError::InvalidMetric { value, .. } => ScoreError::InvalidMetric {
                            name: n.to_string(),
                            value,
                        },
                        other => other,
                    })
                })
                .collect()
        };
        Self::from_grades(
            grade(&MlReport::NAMES, &ml.values(), &t.ml)?,
            grade(&PhysicsReport::NAMES, &ph.values(), &t.physics)?,
            w,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub test: SplitScore,
    pub ood: SplitScore,
    pub speedup_ratio: f64,
    pub speedup: f64,
    /// Fraction in [0, 1].
    pub global: f64,
    pub weights: ScoreWeights,
}

impl ScoreReport {
    pub fn from_splits(test: SplitScore, ood: SplitScore, speedup_ratio: f64, w: &ScoreWeights) -> Result<Self, ScoreError> {
        w.validate()?;
        let speedup = speedup_score(speedup_ratio, w)?;
        Ok(Self {
            global: w.test * test.combined + w.ood * ood.combined + w.speedup * speedup,
            test,
            ood,
            speedup_ratio,
            speedup,
            weights: *w,
        })
    }

    pub fn global_percent(&self) -> f64 {
        100.0 * self.global
    }

    /// One-line grade row: test ML | test physics | OOD ML | OOD physics.
    pub fn grade_row(&self) -> String {
        let s = |g: &[Grade]| g.iter().map(|g| g.symbol()).collect::<String>();
        format!(
            "{} | {} | {} | {}",
            s(&self.test.ml_grades),
            s(&self.test.physics_grades),
            s(&self.ood.ml_grades),
            s(&self.ood.physics_grades)
        )
    }
}

/// Full pipeline from raw metric reports.
pub fn global_score(
    ml_test: &MlReport,
    ph_test: &PhysicsReport,
    ml_ood: &MlReport,
    ph_ood: &PhysicsReport,
    speedup_ratio: f64,
    w: &ScoreWeights,
    t: &ThresholdTable,
) -> Result<ScoreReport, ScoreError> {
    w.validate()?;
    t.validate()?;
    let test = SplitScore::from_reports(ml_test, ph_test, w, t)?;
    let ood = SplitScore::from_reports(ml_ood, ph_ood, w, t)?;
    ScoreReport::from_splits(test, ood, speedup_ratio, w)
}
