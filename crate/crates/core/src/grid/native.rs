//! Native JSON case schema.
//!
//! ```json
//! {
//!   "base_mva": 100.0,
//!   "substations": [{"name": "s0", "base_kv": 138.0, "shunt_g_mw": 0.0, "shunt_b_mvar": 0.0}],
//!   "lines": [{"name": "l0", "from": 0, "to": 1, "r": 0.01, "x": 0.1, "b": 0.02, "tap": 1.0}],
//!   "generators": [{"name": "g0", "substation": 0, "p_mw": 50.0, "v_kv": 140.0, "slack": true}],
//!   "loads": [{"name": "d0", "substation": 1, "p_mw": 40.0, "q_mvar": 10.0}]
//! }
//! ```
//!
//! `shunt_*`, `b`, `tap` and `slack` are optional. Impedances are per-unit on
//! `base_mva`, injections in MW/MVAr, voltages in kV.

use serde::{Deserialize, Serialize};

use super::{CaseError, Generator, GridCase, Line, Load, Substation};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeCase {
    pub base_mva: f64,
    pub substations: Vec<Substation>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<Load>,
}

pub fn parse_native(text: &str) -> Result<GridCase, CaseError> {
    let raw: NativeCase = serde_json::from_str(text).map_err(|e| CaseError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    GridCase::new(
        raw.base_mva,
        raw.substations,
        raw.lines,
        raw.generators,
        raw.loads,
    )
}

pub fn to_native_json(case: &GridCase) -> String {
    let raw = NativeCase {
        base_mva: case.base_mva(),
        substations: case.substations().to_vec(),
        lines: case.lines().to_vec(),
        generators: case.generators().to_vec(),
        loads: case.loads().to_vec(),
    };
    serde_json::to_string_pretty(&raw).expect("case serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{
        "base_mva": 100.0,
        "substations": [{"name": "a", "base_kv": 138.0}, {"name": "b", "base_kv": 138.0}],
        "lines": [{"name": "l0", "from": 0, "to": 1, "r": 0.0, "x": 0.1}],
        "generators": [{"name": "g0", "substation": 0, "p_mw": 0.0, "v_kv": 138.0, "slack": true}],
        "loads": [{"name": "d1", "substation": 1, "p_mw": 50.0, "q_mvar": 5.0}]
    }"#;

    #[test]
    fn minimal_case_parses() {
        let case = parse_native(TWO_BUS).unwrap();
        assert_eq!(case.n_substations(), 2);
        assert_eq!(case.n_lines(), 1);
        assert_eq!(case.lines()[0].tap, 1.0);
        assert_eq!(case.lines()[0].b, 0.0);
        let again = parse_native(&to_native_json(&case)).unwrap();
        assert_eq!(case, again);
    }

    #[test]
    fn parse_error_carries_location() {
        let err = parse_native("{\n  \"base_mva\": 100.0,\n  \"substations\": [oops]\n}").unwrap_err();
        match err {
            CaseError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_slacks_rejected() {
        let text = TWO_BUS.replace(
            r#""loads""#,
            r#""generators_extra": [], "loads""#,
        );
        // unknown keys are rejected outright
        assert!(matches!(parse_native(&text), Err(CaseError::Parse { .. })));

        let text = TWO_BUS.replace(
            r#"[{"name": "g0", "substation": 0, "p_mw": 0.0, "v_kv": 138.0, "slack": true}]"#,
            r#"[{"name": "g0", "substation": 0, "p_mw": 0.0, "v_kv": 138.0, "slack": true},
                {"name": "g1", "substation": 1, "p_mw": 0.0, "v_kv": 138.0, "slack": true}]"#,
        );
        let err = parse_native(&text).unwrap_err();
        assert!(matches!(err, CaseError::Invalid(ref m) if m.contains("slack")), "{err}");
    }
}
