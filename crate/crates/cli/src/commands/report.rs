use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::reliability::ReliabilityRow;
use super::simulate::SimulationSummary;
use super::Outcome;
use crate::output::{out_dir, write_atomic, write_csv};

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Summary JSON and reliability CSV files, or directories to search.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One reproduced table cell next to its reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub table: String,
    pub cell: String,
    pub value: f64,
    pub reference: f64,
    pub abs_delta: f64,
}

impl Check {
    pub fn new(table: &str, cell: String, value: f64, reference: f64) -> Self {
        Self { table: table.into(), cell, value, reference, abs_delta: (value - reference).abs() }
    }
}

pub fn run(args: ReportArgs) -> Result<Outcome> {
    let mut files = Vec::new();
    for input in &args.inputs {
        collect(input, &mut files)?;
    }
    files.sort();
    let mut checks = Vec::new();
    for f in &files {
        checks.extend(checks_from(f)?);
    }
    if checks.is_empty() {
        bail!("no reference cells found in {} file(s)", files.len());
    }
    let dir = out_dir(args.out);
    write_csv(&dir.join("report.csv"), &checks)?;
    let md = markdown(&checks);
    write_atomic(&dir.join("report.md"), md.as_bytes())?;
    print!("{md}");
    Ok(Outcome::Pass)
}

fn collect(path: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        for entry in std::fs::read_dir(path).with_context(|| format!("reading {}", path.display()))? {
            collect(&entry?.path(), files)?;
        }
    } else if path.is_file() {
        if matches!(path.extension().and_then(|e| e.to_str()), Some("json" | "csv")) {
            files.push(path.to_path_buf());
        }
    } else {
        bail!("{} does not exist", path.display());
    }
    Ok(())
}

/// Reference cells in one output file; files of other shapes yield none.
fn checks_from(path: &Path) -> Result<Vec<Check>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(serde_json::from_str::<SimulationSummary>(&text).map(|s| s.checks).unwrap_or_default());
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let Ok(rows) = reader.deserialize::<ReliabilityRow>().collect::<Result<Vec<_>, _>>() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    let mut seen_columns = Vec::new();
    for r in &rows {
        if let Some(reference) = r.reference {
            let cell = format!("{} {} Mbps sigma={} ms", r.scheme, r.rate_mbps, r.sigma_ms);
            out.push(Check::new("III", cell, r.closed_form, reference));
        }
        if let Some(reference) = r.reference_phi_mbps {
            if !seen_columns.contains(&(r.rate_mbps, r.sigma_ms)) {
                seen_columns.push((r.rate_mbps, r.sigma_ms));
                let cell = format!("phi {} Mbps sigma={} ms", r.rate_mbps, r.sigma_ms);
                out.push(Check::new("III", cell, r.phi_mbps, reference));
            }
        }
    }
    Ok(out)
}

fn markdown(checks: &[Check]) -> String {
    let mut by_table: BTreeMap<&str, Vec<&Check>> = BTreeMap::new();
    for c in checks {
        by_table.entry(&c.table).or_default().push(c);
    }
    let mut out = String::new();
    for (table, cells) in by_table {
        let worst = cells.iter().map(|c| c.abs_delta).fold(0.0, f64::max);
        let _ = writeln!(out, "## Table {table}\n\n| cell | value | reference | abs delta |\n|---|---:|---:|---:|");
        for c in cells {
            let _ = writeln!(out, "| {} | {:.6} | {} | {:.3e} |", c.cell, c.value, c.reference, c.abs_delta);
        }
        let _ = writeln!(out, "\nlargest abs delta: {worst:.3e}\n");
    }
    out
}
