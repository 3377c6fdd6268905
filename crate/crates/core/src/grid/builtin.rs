//! Bundled IEEE test systems.

use super::{parse_matpower, GridCase, MatpowerOptions};

const CASE14: &str = include_str!("../../data/case14.m");
const CASE118: &str = include_str!("../../data/case118.m");

pub fn ieee14() -> GridCase {
    parse_matpower(CASE14, &MatpowerOptions::default()).expect("bundled case14 parses")
}

pub fn ieee118() -> GridCase {
    parse_matpower(CASE118, &MatpowerOptions::default()).expect("bundled case118 parses")
}

/// Resolves `ieee14` / `ieee118` or loads a case file.
pub fn load_case(name_or_path: &str) -> Result<GridCase, super::CaseError> {
    match name_or_path {
        "ieee14" | "case14" => Ok(ieee14()),
        "ieee118" | "case118" => Ok(ieee118()),
        path => GridCase::from_path(path),
    }
}
