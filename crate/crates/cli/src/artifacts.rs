//! Names and readers of the files in a run directory.

use std::collections::BTreeMap;

pub const CONFIG: &str = "config.ini";
pub const VALIDATION: &str = "validation.txt";
pub const SOLVE: &str = "solve.txt";
pub const TRACE_LATTICE: &str = "trace_lattice.txt";
pub const HOWARD_PDE: &str = "howard_pde.txt";
pub const DISCREPANCY: &str = "discrepancy.txt";
pub const STATS: &str = "stats.txt";
pub const PATHS: &str = "paths.csv";
pub const DOMINANCE: &str = "dominance.txt";
pub const SUMMARY: &str = "summary.json";

pub fn value_file(engine: &str) -> String {
    format!("value_{engine}.csv")
}

pub fn surface_file(engine: &str, mode: usize) -> String {
    format!("surface_{engine}_mode{}.csv", mode + 1)
}

pub fn region_file(engine: &str, mode: usize) -> String {
    format!("region_{engine}_mode{}.csv", mode + 1)
}

/// `key=value` lines (with or without a leading `# `); later keys win.
pub fn key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let l = l.strip_prefix("# ").unwrap_or(l);
            let (k, v) = l.split_once('=')?;
            (!k.contains(' ') && !k.is_empty()).then(|| (k.to_string(), v.to_string()))
        })
        .collect()
}

/// The `problem_hash` recorded near the top of an artifact.
pub fn recorded_hash(text: &str) -> Option<String> {
    text.lines().take(8).find_map(|l| {
        let l = l.strip_prefix("# ").unwrap_or(l);
        l.strip_prefix("problem_hash=").map(|h| h.trim().to_string())
    })
}
