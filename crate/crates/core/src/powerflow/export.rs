//! CSV export of a solution.
//!
//! Line table: one row per line in index order, columns [`LINE_COLUMNS`]
//! (A, MW, MVAr, kV, rad). Node table: one row per energized node, columns
//! [`NODE_COLUMNS`].

use std::io::Write;

use super::PowerFlowSolution;
use crate::grid::GridCase;

pub const LINE_COLUMNS: [&str; 11] = [
    "id", "a_or", "a_ex", "p_or", "p_ex", "q_or", "q_ex", "v_or", "v_ex", "theta_or", "theta_ex",
];

pub const NODE_COLUMNS: [&str; 6] = ["substation", "busbar", "kind", "vm_pu", "vm_kv", "va_rad"];

pub fn write_line_csv<W: Write>(w: W, case: &GridCase, sol: &PowerFlowSolution) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LINE_COLUMNS)?;
    let f = &sol.lines;
    for (l, line) in case.lines().iter().enumerate() {
        let vals = [
            f.a_or[l], f.a_ex[l], f.p_or[l], f.p_ex[l], f.q_or[l], f.q_ex[l], f.v_or[l], f.v_ex[l],
            f.theta_or[l], f.theta_ex[l],
        ];
        let mut rec = vec![line.name.clone()];
        rec.extend(vals.iter().map(|v| format!("{v:e}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_node_csv<W: Write>(w: W, case: &GridCase, sol: &PowerFlowSolution) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(NODE_COLUMNS)?;
    let st = &sol.state;
    let kv = st.vm_kv(case);
    for (k, &(sub, busbar)) in st.nodes.nodes().iter().enumerate() {
        let kind = match st.kinds[k] {
            super::NodeKind::Slack => "slack",
            super::NodeKind::Pv => "pv",
            super::NodeKind::Pq => "pq",
        };
        out.write_record([
            case.substations()[sub].name.clone(),
            busbar.to_string(),
            kind.to_string(),
            format!("{:e}", st.vm[k]),
            format!("{:e}", kv[k]),
            format!("{:e}", st.va[k]),
        ])?;
    }
    out.flush()?;
    Ok(())
}
