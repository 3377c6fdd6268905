use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::Serialize;

use gridscreen_core::scenario::{read_dataset, read_predictions, StoredDataset};
use gridscreen_core::scoring::measure_speedup;
use gridscreen_core::surrogate::{project_predictions, ProjectionCache};
use gridscreen_core::{
    evaluate_ml, evaluate_physics, global_score, load_case, solve_newton_raphson, DcBaseline, GridCase, InputBatch,
    MlReport, PhysicsContext, PhysicsReport, PhysicsTolerances, PredictionSet, ScoreReport, ScoreWeights,
    SolverOptions, Split, Surrogate, ThresholdTable,
};

use crate::error::{CliError, Result};
use crate::manifest::{check_budget, InputRef, RunManifest};
use crate::Globals;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    /// DC flows with mean training voltages.
    Dc,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Dataset root holding `test/` and `test_ood/` (and `train/` for --model).
    #[arg(long)]
    truth: PathBuf,
    /// Prediction root holding `test/` and `test_ood/` output files.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    predictions: Option<PathBuf>,
    /// Fit and time a built-in model instead of reading predictions.
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long, default_value = "ieee118")]
    case: String,
    /// Reference solver time: seconds, or a solve `timing.json`. Measured
    /// with the sequential solver when omitted.
    #[arg(long)]
    baseline_time: Option<String>,
    /// Surrogate inference time: seconds or a JSON file with a `seconds`
    /// field. Required with --predictions; measured with --model.
    #[arg(long)]
    inference_time: Option<String>,
    /// TOML file with score weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Project active flows onto the conservation constraints before scoring.
    #[arg(long)]
    project: bool,
    /// Samples per timed inference call.
    #[arg(long, default_value_t = 1000)]
    inf_batch_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

const EVAL_SPLITS: [Split; 2] = [Split::Test, Split::TestOod];

fn split_dir(root: &Path, split: Split, what: &str) -> Result<PathBuf> {
    let dir = root.join(split.name());
    if dir.is_dir() {
        Ok(dir)
    } else {
        Err(CliError::Validation(format!("{what} {} is missing split {split}", root.display())))
    }
}

fn parse_time(value: &str) -> Result<f64> {
    let secs = match value.parse::<f64>() {
        Ok(v) => v,
        Err(_) => {
            let path = Path::new(value);
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
            json.get("seconds")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| CliError::Validation(format!("{value}: no numeric `seconds` field")))?
        }
    };
    if secs > 0.0 && secs.is_finite() {
        Ok(secs)
    } else {
        Err(CliError::Validation(format!("time must be positive, got {secs}")))
    }
}

/// Everything loaded once and reused across repetitions.
struct Prepared {
    case: GridCase,
    truth: Vec<StoredDataset>,
    predictions: Option<Vec<PredictionSet>>,
    model: Option<DcBaseline>,
    weights: ScoreWeights,
}

fn prepare(a: &ScoreArgs, run: &mut RunManifest) -> Result<Prepared> {
    let case = load_case(&a.case)?;
    run.case = Some(InputRef::case(&a.case, &case)?);
    let mut truth = Vec::new();
    for split in EVAL_SPLITS {
        let ds = read_dataset(&split_dir(&a.truth, split, "truth")?)?;
        if ds.manifest.n_lines != case.n_lines() || ds.manifest.topo_len != case.topo_len() {
            return Err(CliError::Validation(format!("truth split {split} was generated for a different case")));
        }
        truth.push(ds);
    }
    let predictions = match &a.predictions {
        Some(root) => Some(
            EVAL_SPLITS
                .iter()
                .map(|&s| Ok(read_predictions(&split_dir(root, s, "predictions")?)?))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let model = match a.model {
        Some(Model::Dc) => {
            let train = read_dataset(&split_dir(&a.truth, Split::Train, "truth")?)?;
            let mut m = DcBaseline::new();
            let inputs = InputBatch {
                case: &case,
                injections: &train.injections,
                topologies: &train.topologies,
            };
            run.phase("fit", || m.fit(&inputs, &train.outputs))?;
            Some(m)
        }
        None => None,
    };
    let weights = match &a.weights {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let w: ScoreWeights = toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            w.validate()?;
            w
        }
        None => ScoreWeights::default(),
    };
    if a.predictions.is_some() && a.inference_time.is_none() {
        return Err(CliError::Validation("--inference-time is required with --predictions".into()));
    }
    if a.inf_batch_size == 0 {
        return Err(CliError::Validation("--inf-batch-size must be positive".into()));
    }
    Ok(Prepared {
        case,
        truth,
        predictions,
        model,
        weights,
    })
}

/// One warm-up call on the first batch, then every batch timed.
fn timed_inference(model: &DcBaseline, p: &Prepared, batch: usize) -> Result<(Vec<PredictionSet>, f64)> {
    let call = |ds: &StoredDataset, lo: usize, hi: usize| {
        model.predict(&InputBatch {
            case: &p.case,
            injections: &ds.injections[lo..hi],
            topologies: &ds.topologies[lo..hi],
        })
    };
    let first = &p.truth[0];
    call(first, 0, batch.min(first.injections.len()))?;
    let mut total = 0.0;
    let mut out = Vec::new();
    for ds in &p.truth {
        let n = ds.injections.len();
        let mut pred: Option<PredictionSet> = None;
        for lo in (0..n).step_by(batch) {
            let hi = (lo + batch).min(n);
            let t = Instant::now();
            let part = call(ds, lo, hi)?;
            total += t.elapsed().as_secs_f64();
            match pred.as_mut() {
                None => pred = Some(part),
                Some(acc) => acc.append(&part)?,
            }
        }
        out.push(pred.unwrap_or_else(|| ds.outputs.slice(0, 0)));
    }
    Ok((out, total))
}

/// Sequential reference solves over the evaluation inputs, one warm-up solve first.
fn timed_baseline(p: &Prepared) -> Result<f64> {
    let opts = SolverOptions::default();
    let first = &p.truth[0];
    if let (Some(t), Some(i)) = (first.topologies.first(), first.injections.first()) {
        let _ = solve_newton_raphson(&p.case, t, i, &opts);
    }
    let start = Instant::now();
    for ds in &p.truth {
        for (t, i) in ds.topologies.iter().zip(&ds.injections) {
            solve_newton_raphson(&p.case, t, i, &opts).map_err(|e| CliError::Convergence(e.to_string()))?;
        }
    }
    Ok(start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitMetrics {
    pub split: Split,
    pub ml: MlReport,
    pub physics: PhysicsReport,
    pub projection_residual_mw: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreOutput {
    pub report: ScoreReport,
    pub metrics: Vec<SplitMetrics>,
    pub baseline_seconds: f64,
    pub inference_seconds: f64,
}

fn score_once(a: &ScoreArgs, p: &Prepared) -> Result<ScoreOutput> {
    let (preds, measured) = match (&p.predictions, &p.model) {
        (Some(preds), _) => (preds.clone(), None),
        (None, Some(m)) => {
            let (preds, secs) = timed_inference(m, p, a.inf_batch_size)?;
            (preds, Some(secs))
        }
        (None, None) => unreachable!("clap requires predictions or a model"),
    };
    let inference_seconds = match &a.inference_time {
        Some(v) => parse_time(v)?,
        None => measured.filter(|&s| s > 0.0).unwrap_or(f64::MIN_POSITIVE),
    };
    let baseline_seconds = match &a.baseline_time {
        Some(v) => parse_time(v)?,
        None => timed_baseline(p)?,
    };
    let cache = ProjectionCache::new();
    let tol = PhysicsTolerances::default();
    let mut metrics = Vec::new();
    for ((pred, ds), split) in preds.into_iter().zip(&p.truth).zip(EVAL_SPLITS) {
        if pred.n_samples() != ds.outputs.n_samples() || pred.n_lines() != ds.outputs.n_lines() {
            return Err(CliError::Validation(format!(
                "{split}: predictions hold {} samples of {} lines, truth {} of {}",
                pred.n_samples(),
                pred.n_lines(),
                ds.outputs.n_samples(),
                ds.outputs.n_lines()
            )));
        }
        let (pred, residual) = if a.project {
            let (proj, rep) = project_predictions(&pred, &p.case, &ds.topologies, &ds.injections, &cache)?;
            (proj, Some(rep.max_residual))
        } else {
            (pred, None)
        };
        let ctx = PhysicsContext {
            case: &p.case,
            topologies: &ds.topologies,
            injections: &ds.injections,
        };
        metrics.push(SplitMetrics {
            split,
            ml: evaluate_ml(&pred, &ds.outputs)?,
            physics: evaluate_physics(&pred, &ctx, &tol)?,
            projection_residual_mw: residual,
        });
    }
    let ratio = measure_speedup(baseline_seconds, inference_seconds)?;
    let report = global_score(
        &metrics[0].ml,
        &metrics[0].physics,
        &metrics[1].ml,
        &metrics[1].physics,
        ratio,
        &p.weights,
        &ThresholdTable::default(),
    )?;
    Ok(ScoreOutput {
        report,
        metrics,
        baseline_seconds,
        inference_seconds,
    })
}

fn render(out: &ScoreOutput) -> String {
    let r = &out.report;
    format!(
        "grades  {}\n\
         test    ml {:.3}  physics {:.3}\n\
         ood     ml {:.3}  physics {:.3}\n\
         speedup ratio {:.3}  score {:.3}\n\
         global  {:.1}%\n",
        r.grade_row(),
        r.test.ml,
        r.test.physics,
        r.ood.ml,
        r.ood.physics,
        r.speedup_ratio,
        r.speedup,
        r.global_percent()
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn run(a: &ScoreArgs, g: &Globals) -> Result<ScoreOutput> {
    let mut run = RunManifest::start("score");
    let p = prepare(a, &mut run)?;
    check_budget(&run, g.budget)?;
    let out = run.phase("score", || score_once(a, &p))?;
    print!("{}", render(&out));
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_json(&dir.join("score.json"), &out)?;
        fs::write(dir.join("score.txt"), render(&out)).map_err(|e| CliError::io(dir, e))?;
        run.write(dir)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct RepeatReport {
    pub times: usize,
    /// Global scores in percent, one per run.
    pub global: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub speedup_ratio: Vec<f64>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn repeat(a: &ScoreArgs, times: usize, g: &Globals) -> Result<()> {
    if times == 0 {
        return Err(CliError::Validation("--times must be at least 1".into()));
    }
    let mut run = RunManifest::start("repeat");
    let p = prepare(a, &mut run)?;
    let mut global = Vec::with_capacity(times);
    let mut ratios = Vec::with_capacity(times);
    for i in 0..times {
        let out = run.phase(&format!("score {i}"), || score_once(a, &p))?;
        global.push(out.report.global_percent());
        ratios.push(out.report.speedup_ratio);
        check_budget(&run, g.budget)?;
    }
    let (mean, std) = mean_std(&global);
    let report = RepeatReport {
        times,
        global,
        mean,
        std,
        speedup_ratio: ratios,
    };
    println!("global {mean:.1} ± {std:.1} % over {times} runs");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_json(&dir.join("repeat.json"), &report)?;
        run.write(dir)?;
    }
    Ok(())
}
