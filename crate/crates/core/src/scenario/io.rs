//! Columnar on-disk layout: one CSV per quantity, one row per sample.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::Split;
use super::dataset::Dataset;
use super::ScenarioError;
use crate::grid::Topology;
use crate::metrics::{PredictionSet, Quantity};
use crate::powerflow::Injections;

pub const MANIFEST: &str = "manifest.json";
pub const INPUTS: [&str; 4] = ["prod_p", "prod_v", "load_p", "load_q"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub n_samples: usize,
    pub env_seed: u64,
    pub actor_seed: u64,
    pub config_hash: String,
    pub redraws: usize,
    pub n_lines: usize,
    pub topo_len: usize,
    pub n_generators: usize,
    pub n_loads: usize,
    pub physics: bool,
}

/// A dataset read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub manifest: DatasetManifest,
    pub injections: Vec<Injections>,
    pub topologies: Vec<Topology>,
    pub outputs: PredictionSet,
}

fn io_err(path: &Path, e: impl ToString) -> ScenarioError {
    ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn table_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.csv"))
}

fn write_rows<I, R, T>(path: &Path, prefix: &str, width: usize, rows: I) -> Result<(), ScenarioError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = T>,
    T: ToString,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record((0..width).map(|i| format!("{prefix}{i}"))).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().map(|x| x.to_string())).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_rows<T: std::str::FromStr>(path: &Path) -> Result<(usize, Vec<Vec<T>>), ScenarioError>
where
    T::Err: std::fmt::Display,
{
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let width = r.headers().map_err(|e| io_err(path, e))?.len();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<T>().map_err(|e| io_err(path, format!("row {i}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((width, rows))
}

fn flat_rows(values: &[f64], width: usize) -> std::slice::ChunksExact<'_, f64> {
    values.chunks_exact(width.max(1))
}

/// Writes the output columns present in `pred` (and nothing else).
pub fn write_predictions(dir: &Path, pred: &PredictionSet) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for q in pred.quantities() {
        let col = pred.column(q).expect("listed quantity");
        write_rows(&table_path(dir, q.name()), "line_", pred.n_lines(), flat_rows(col, pred.n_lines()))?;
    }
    Ok(())
}

/// Reads every output quantity file present in `dir`.
pub fn read_predictions(dir: &Path) -> Result<PredictionSet, ScenarioError> {
    let mut columns = BTreeMap::new();
    let mut n_lines = None;
    for q in Quantity::ALL {
        let path = table_path(dir, q.name());
        if !path.exists() {
            continue;
        }
        let (width, rows) = read_rows::<f64>(&path)?;
        if *n_lines.get_or_insert(width) != width {
            return Err(io_err(&path, format!("expected {} columns, found {width}", n_lines.unwrap())));
        }
        columns.insert(q, rows.concat());
    }
    let n_lines = n_lines.ok_or_else(|| io_err(dir, "no output files"))?;
    PredictionSet::from_columns(n_lines, columns).map_err(|e| io_err(dir, e))
}

pub fn write_dataset(dir: &Path, ds: &Dataset, case: &crate::grid::GridCase) -> Result<DatasetManifest, ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let (ng, nl) = (case.generators().len(), case.loads().len());
    let inj = |f: fn(&Injections) -> &Vec<f64>| ds.samples.iter().map(move |s| f(&s.injections).iter().copied());
    write_rows(&table_path(dir, "prod_p"), "gen_", ng, inj(|i| &i.prod_p))?;
    write_rows(&table_path(dir, "prod_v"), "gen_", ng, inj(|i| &i.prod_v))?;
    write_rows(&table_path(dir, "load_p"), "load_", nl, inj(|i| &i.load_p))?;
    write_rows(&table_path(dir, "load_q"), "load_", nl, inj(|i| &i.load_q))?;
    let topos = ds.samples.iter().map(|s| &s.scenario.topology);
    write_rows(
        &table_path(dir, "line_status"),
        "line_",
        case.n_lines(),
        topos.clone().map(|t| t.line_status.iter().map(|&b| b as u8)),
    )?;
    write_rows(&table_path(dir, "topo_vect"), "pos_", case.topo_len(), topos.map(|t| t.busbar.iter().copied()))?;
    {
        let path = table_path(dir, "actions");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(["reference_actions", "disconnected"]).map_err(|e| io_err(&path, e))?;
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        for s in &ds.samples {
            w.write_record([join(&s.scenario.reference_actions), join(&s.scenario.disconnected)])
                .map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    write_predictions(dir, &ds.outputs(case))?;
    let physics = ds.samples.iter().all(|s| s.physics.is_some()) && !ds.is_empty();
    if physics {
        write_physics(dir, ds)?;
    }
    let manifest = DatasetManifest {
        split: ds.split,
        n_samples: ds.len(),
        env_seed: ds.seeds.0,
        actor_seed: ds.seeds.1,
        config_hash: ds.config_hash.clone(),
        redraws: ds.redraws,
        n_lines: case.n_lines(),
        topo_len: case.topo_len(),
        n_generators: ng,
        n_loads: nl,
        physics,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

/// Sparse sidecars `ybus.csv` (sample, row, col, re, im) and `sbus.csv`
/// (sample, node, re, im, kind).
fn write_physics(dir: &Path, ds: &Dataset) -> Result<(), ScenarioError> {
    let path = table_path(dir, "ybus");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    w.write_record(["sample", "row", "col", "re", "im"]).map_err(|e| io_err(&path, e))?;
    for (i, s) in ds.samples.iter().enumerate() {
        for &(r, c, y) in &s.physics.as_ref().expect("checked").ybus {
            w.write_record([i.to_string(), r.to_string(), c.to_string(), y.re.to_string(), y.im.to_string()])
                .map_err(|e| io_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    let path = table_path(dir, "sbus");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    w.write_record(["sample", "node", "re", "im", "kind"]).map_err(|e| io_err(&path, e))?;
    for (i, s) in ds.samples.iter().enumerate() {
        let ph = s.physics.as_ref().expect("checked");
        for (k, v) in ph.sbus.iter().enumerate() {
            let kind = if k == ph.slack {
                "slack"
            } else if ph.pv_nodes.contains(&k) {
                "pv"
            } else {
                "pq"
            };
            w.write_record([i.to_string(), k.to_string(), v.re.to_string(), v.im.to_string(), kind.to_string()])
                .map_err(|e| io_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))
}

/// Reads the `ybus.csv` sidecar as per-sample triplets.
pub fn read_ybus(dir: &Path) -> Result<Vec<Vec<(usize, usize, Complex64)>>, ScenarioError> {
    let path = table_path(dir, "ybus");
    let mut r = csv::Reader::from_path(&path).map_err(|e| io_err(&path, e))?;
    let mut out: Vec<Vec<(usize, usize, Complex64)>> = Vec::new();
    for rec in r.deserialize::<(usize, usize, usize, f64, f64)>() {
        let (s, row, col, re, im) = rec.map_err(|e| io_err(&path, e))?;
        if out.len() <= s {
            out.resize_with(s + 1, Vec::new);
        }
        out[s].push((row, col, Complex64::new(re, im)));
    }
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, ScenarioError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset, ScenarioError> {
    let manifest = read_manifest(dir)?;
    let mut inputs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(4);
    for name in INPUTS {
        let path = table_path(dir, name);
        let (_, rows) = read_rows::<f64>(&path)?;
        if rows.len() != manifest.n_samples {
            return Err(io_err(&path, format!("{} rows, manifest says {}", rows.len(), manifest.n_samples)));
        }
        inputs.push(rows);
    }
    let [load_q, load_p, prod_v, prod_p] = [inputs.pop(), inputs.pop(), inputs.pop(), inputs.pop()].map(|x| x.expect("four inputs"));
    let injections = prod_p
        .into_iter()
        .zip(prod_v)
        .zip(load_p.into_iter().zip(load_q))
        .map(|((prod_p, prod_v), (load_p, load_q))| Injections {
            prod_p,
            prod_v,
            load_p,
            load_q,
        })
        .collect();
    let (_, status) = read_rows::<u8>(&table_path(dir, "line_status"))?;
    let (_, busbar) = read_rows::<i8>(&table_path(dir, "topo_vect"))?;
    let topologies = status
        .into_iter()
        .zip(busbar)
        .map(|(s, b)| Topology {
            busbar: b,
            line_status: s.into_iter().map(|x| x != 0).collect(),
        })
        .collect();
    let outputs = read_predictions(dir)?;
    if outputs.n_samples() != manifest.n_samples {
        return Err(io_err(dir, "output row count differs from the manifest"));
    }
    Ok(StoredDataset {
        manifest,
        injections,
        topologies,
        outputs,
    })
}
