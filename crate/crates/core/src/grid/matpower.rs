//! MATPOWER case importer (version 2 format, standard column order).
//!
//! Every bus becomes a substation. Bus demand becomes a load named
//! `load_<bus>` when nonzero, bus shunts become substation shunts, in-service
//! generators become generators (the first generator at the reference bus is
//! the slack) and in-service branches become lines.

use std::collections::HashMap;

use super::{CaseError, Generator, GridCase, Line, Load, Substation};

#[derive(Debug, Clone, Default)]
pub struct MatpowerOptions {
    /// Base voltage used for buses whose `baseKV` column is nonpositive.
    /// Without it such buses are a validation error.
    pub default_base_kv: Option<f64>,
}

const BUS_COLS: usize = 10;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

struct Matrix {
    /// Source line of each row, for error messages.
    lines: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> CaseError {
    CaseError::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '\'' | '"' => in_quote = !in_quote,
            '%' | '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_number(tok: &str, line: usize, column: usize) -> Result<f64, CaseError> {
    let t = tok.trim();
    match t {
        "Inf" | "inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        _ => t
            .parse::<f64>()
            .map_err(|_| parse_err(line, column, format!("expected a number, found `{t}`"))),
    }
}

struct Parsed {
    scalars: HashMap<String, (usize, String)>,
    matrices: HashMap<String, Matrix>,
}

fn scan(text: &str) -> Result<Parsed, CaseError> {
    let mut scalars = HashMap::new();
    let mut matrices: HashMap<String, Matrix> = HashMap::new();
    let mut open: Option<(String, Matrix, Vec<f64>, usize)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = strip_comment(raw);
        let mut rest: &str = line;

        if open.is_none() {
            let trimmed = rest.trim();
            if trimmed.is_empty() || trimmed.starts_with("function") {
                continue;
            }
            let Some(eq) = trimmed.find('=') else {
                return Err(parse_err(lineno, 1, format!("unexpected statement `{trimmed}`")));
            };
            let lhs = trimmed[..eq].trim();
            let name = lhs.strip_prefix("mpc.").unwrap_or(lhs).to_string();
            let rhs = trimmed[eq + 1..].trim();
            if let Some(body) = rhs.strip_prefix('[') {
                open = Some((
                    name,
                    Matrix {
                        lines: Vec::new(),
                        rows: Vec::new(),
                    },
                    Vec::new(),
                    lineno,
                ));
                rest = body;
            } else {
                let value = rhs.trim_end_matches(';').trim().to_string();
                scalars.insert(name, (lineno, value));
                continue;
            }
        }

        let (name, matrix, row, _) = open.as_mut().expect("inside matrix");
        let mut column = line.len() - rest.len() + 1;
        let mut closed = None;
        for (i, ch) in rest.char_indices() {
            if ch == ']' {
                closed = Some(i);
                break;
            }
        }
        let body = match closed {
            Some(i) => &rest[..i],
            None => rest,
        };
        for segment in body.split_inclusive(';') {
            let (vals, ends_row) = match segment.strip_suffix(';') {
                Some(v) => (v, true),
                None => (segment, false),
            };
            for tok in vals.split(|c: char| c.is_whitespace() || c == ',') {
                if !tok.is_empty() {
                    row.push(parse_number(tok, lineno, column)?);
                }
            }
            column += segment.len();
            if ends_row && !row.is_empty() {
                matrix.rows.push(std::mem::take(row));
                matrix.lines.push(lineno);
            }
        }
        // newline also terminates a row
        if !row.is_empty() {
            matrix.rows.push(std::mem::take(row));
            matrix.lines.push(lineno);
        }
        if closed.is_some() {
            let (name, matrix, _, _) = open.take().expect("inside matrix");
            matrices.insert(name, matrix);
        } else {
            let _ = name;
        }
    }
    if let Some((name, _, _, start)) = open {
        return Err(parse_err(start, 1, format!("matrix `{name}` is never closed")));
    }
    Ok(Parsed { scalars, matrices })
}

fn require_matrix<'a>(
    parsed: &'a Parsed,
    name: &str,
    min_cols: usize,
) -> Result<&'a Matrix, CaseError> {
    let m = parsed
        .matrices
        .get(name)
        .ok_or_else(|| parse_err(0, 0, format!("missing `mpc.{name}` matrix")))?;
    for (row, &line) in m.rows.iter().zip(&m.lines) {
        if row.len() < min_cols {
            return Err(parse_err(
                line,
                1,
                format!(
                    "`mpc.{name}` row has {} columns, at least {min_cols} required",
                    row.len()
                ),
            ));
        }
    }
    Ok(m)
}

pub fn parse_matpower(text: &str, opts: &MatpowerOptions) -> Result<GridCase, CaseError> {
    let parsed = scan(text)?;
    let (line, base) = parsed
        .scalars
        .get("baseMVA")
        .ok_or_else(|| parse_err(0, 0, "missing `mpc.baseMVA`"))?;
    let base_mva = parse_number(base, *line, 1)?;

    let bus = require_matrix(&parsed, "bus", BUS_COLS)?;
    let gen = require_matrix(&parsed, "gen", GEN_COLS)?;
    let branch = require_matrix(&parsed, "branch", BRANCH_COLS)?;

    let mut index: HashMap<i64, usize> = HashMap::new();
    let mut substations = Vec::with_capacity(bus.rows.len());
    let mut loads = Vec::new();
    let mut reference_buses = Vec::new();
    for (row, &line) in bus.rows.iter().zip(&bus.lines) {
        let id = row[0] as i64;
        let kind = row[1] as i64;
        if kind == 4 {
            return Err(CaseError::Unsupported(format!(
                "bus {id} (line {line}) is isolated (type 4)"
            )));
        }
        if index.insert(id, substations.len()).is_some() {
            return Err(parse_err(line, 1, format!("duplicate bus number {id}")));
        }
        if kind == 3 {
            reference_buses.push(id);
        }
        let base_kv = if row[9] > 0.0 {
            row[9]
        } else {
            opts.default_base_kv.ok_or_else(|| {
                CaseError::Invalid(format!(
                    "bus {id} (line {line}) has no base voltage; set a default base kV"
                ))
            })?
        };
        substations.push(Substation {
            name: format!("sub_{id}"),
            base_kv,
            shunt_g_mw: row[4],
            shunt_b_mvar: row[5],
        });
        if row[2] != 0.0 || row[3] != 0.0 {
            loads.push(Load {
                name: format!("load_{id}"),
                substation: substations.len() - 1,
                p_mw: row[2],
                q_mvar: row[3],
            });
        }
    }

    let lookup = |id: f64, line: usize, what: &str| -> Result<usize, CaseError> {
        index
            .get(&(id as i64))
            .copied()
            .ok_or_else(|| CaseError::Invalid(format!("{what} on line {line} references unknown bus {id}")))
    };

    let mut generators = Vec::new();
    let mut slack_taken = HashMap::new();
    for (row, &line) in gen.rows.iter().zip(&gen.lines) {
        if row[7] <= 0.0 {
            continue;
        }
        let sub = lookup(row[0], line, "generator")?;
        let bus_id = row[0] as i64;
        let slack = reference_buses.contains(&bus_id) && slack_taken.insert(bus_id, ()).is_none();
        generators.push(Generator {
            name: format!("gen_{}_{}", bus_id, generators.len()),
            substation: sub,
            p_mw: row[1],
            v_kv: row[5] * substations[sub].base_kv,
            slack,
        });
    }

    let mut lines = Vec::new();
    for (row, &line) in branch.rows.iter().zip(&branch.lines) {
        if row[10] <= 0.0 {
            continue;
        }
        if row[9] != 0.0 {
            return Err(CaseError::Unsupported(format!(
                "branch on line {line} is a phase shifter ({} deg)",
                row[9]
            )));
        }
        let from = lookup(row[0], line, "branch")?;
        let to = lookup(row[1], line, "branch")?;
        lines.push(Line {
            name: format!("{}_{}_{}", row[0] as i64, row[1] as i64, lines.len()),
            from,
            to,
            r: row[2],
            x: row[3],
            b: row[4],
            tap: if row[8] == 0.0 { 1.0 } else { row[8] },
        });
    }

    GridCase::new(base_mva, substations, lines, generators, loads)
}
