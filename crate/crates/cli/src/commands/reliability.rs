use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use halp::reliability::{reliability_monte_carlo, ReliabilityColumn, ReliabilityTable, SchemeRow};

use super::Outcome;
use crate::output::{out_dir, write_csv};

#[derive(Args, Debug)]
pub struct ReliabilityArgs {
    /// A reliability table (columns of rate and σ, one row per scheme) or a
    /// sweep description.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Monte Carlo samples per cell; 0 skips sampling.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Sampling threads (the estimates do not depend on this).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn four() -> usize {
    4
}

fn thirty() -> f64 {
    30.0
}

fn image_bytes() -> f64 {
    125_000.0
}

/// Every combination of the listed rates and σ values. The deadline
/// defaults to one frame period per task and the payload to one image per task.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sweep {
    rate_mbps: OneOrMany,
    sigma_ms: OneOrMany,
    #[serde(default)]
    deadline_ms: Option<f64>,
    #[serde(default = "four")]
    n_tasks: usize,
    #[serde(default = "thirty")]
    target_fps: f64,
    #[serde(default = "image_bytes")]
    image_bytes: f64,
    #[serde(default)]
    payload_bits: Option<f64>,
    #[serde(default)]
    scheme: Option<String>,
    #[serde(default)]
    t_inf_ms: Option<f64>,
    #[serde(default)]
    schemes: Vec<SchemeRow>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum Scenario {
    Table(ReliabilityTable),
    Sweep(Sweep),
}

impl Sweep {
    fn into_table(self) -> Result<ReliabilityTable> {
        let n = self.n_tasks as f64;
        let mut schemes = self.schemes;
        if let Some(t_inf_ms) = self.t_inf_ms {
            schemes.push(SchemeRow { scheme: self.scheme.unwrap_or_else(|| "custom".into()), t_inf_ms, reference: None });
        }
        if schemes.is_empty() {
            bail!("sweep needs t_inf_ms or a schemes list");
        }
        let mut columns = Vec::new();
        for rate in self.rate_mbps.values() {
            for sigma in self.sigma_ms.values() {
                columns.push(ReliabilityColumn { rate_mbps: rate, sigma_ms: sigma, reference_phi_mbps: None });
            }
        }
        Ok(ReliabilityTable {
            deadline_ms: self.deadline_ms.unwrap_or(n / self.target_fps * 1e3),
            payload_bits: self.payload_bits.unwrap_or(n * self.image_bytes * 8.0),
            columns,
            schemes,
        })
    }
}

/// One CSV line per (scheme, column) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub scheme: String,
    pub rate_mbps: f64,
    pub sigma_ms: f64,
    pub phi_mbps: f64,
    pub reference_phi_mbps: Option<f64>,
    pub closed_form: f64,
    pub monte_carlo: Option<f64>,
    pub mc_std_error: Option<f64>,
    pub mc_ci_low: Option<f64>,
    pub mc_ci_high: Option<f64>,
    pub reference: Option<f64>,
    pub abs_delta: Option<f64>,
}

pub fn load_table(path: &std::path::Path) -> Result<ReliabilityTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scenario: Scenario = serde_json::from_str(&text)
        .with_context(|| format!("{} is neither a reliability table nor a sweep", path.display()))?;
    let table = match scenario {
        Scenario::Table(t) => t,
        Scenario::Sweep(s) => s.into_table()?,
    };
    if table.columns.is_empty() || table.schemes.is_empty() {
        bail!("reliability table needs at least one column and one scheme");
    }
    // checked here so a bad value is a config error rather than a panic later
    for c in &table.columns {
        table.model(c)?;
    }
    for s in &table.schemes {
        table.spec(s)?;
    }
    Ok(table)
}

pub fn rows(table: &ReliabilityTable, samples: u64, seed: u64, workers: usize) -> Result<Vec<ReliabilityRow>> {
    let cells = table.evaluate()?;
    let ncol = table.columns.len();
    let mut out = Vec::with_capacity(cells.len());
    for (i, cell) in cells.into_iter().enumerate() {
        let column = &table.columns[i % ncol];
        let estimate = if samples > 0 {
            let model = table.model(column)?;
            let spec = table.spec(&table.schemes[i / ncol])?;
            // each cell samples from its own seed
            Some(reliability_monte_carlo(&model, &spec, samples, seed.wrapping_add(i as u64), workers)?)
        } else {
            None
        };
        out.push(ReliabilityRow {
            abs_delta: cell.delta(),
            scheme: cell.scheme,
            rate_mbps: cell.rate_mbps,
            sigma_ms: cell.sigma_ms,
            phi_mbps: cell.phi_mbps,
            reference_phi_mbps: column.reference_phi_mbps,
            closed_form: cell.closed_form,
            monte_carlo: estimate.map(|e| e.probability),
            mc_std_error: estimate.map(|e| e.std_error),
            mc_ci_low: estimate.map(|e| e.ci_low),
            mc_ci_high: estimate.map(|e| e.ci_high),
            reference: cell.reference,
        });
    }
    Ok(out)
}

pub fn run(args: ReliabilityArgs) -> Result<Outcome> {
    let table = load_table(&args.scenario)?;
    let workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rows = rows(&table, args.samples, args.seed, workers)?;
    write_csv(&out_dir(args.out).join("reliability.csv"), &rows)?;

    let header: Vec<String> = table
        .columns
        .iter()
        .map(|c| format!("{} Mbps/{} ms (phi={:.1})", c.rate_mbps, c.sigma_ms, phi(&rows, c)))
        .collect();
    println!("{:<16} {}", "scheme", header.join("  "));
    for chunk in rows.chunks(table.columns.len()) {
        let cells: Vec<String> = chunk.iter().map(|r| format!("{:.6}", r.closed_form)).collect();
        println!("{:<16} {}", chunk[0].scheme, cells.join("  "));
    }
    if let Some(worst) = rows.iter().filter_map(|r| r.abs_delta).max_by(f64::total_cmp) {
        println!("largest |delta| against reference cells: {worst:.3e}");
    }
    Ok(Outcome::Pass)
}

fn phi(rows: &[ReliabilityRow], column: &ReliabilityColumn) -> f64 {
    rows.iter()
        .find(|r| r.rate_mbps == column.rate_mbps && r.sigma_ms == column.sigma_ms)
        .map_or(0.0, |r| r.phi_mbps)
}
