use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use halp::netspec::NetworkSpec;
use halp::partition::{plan_partition, transfer_sizes_oracle, PartitionPlan, ServerId, TransferPlan};
use halp::rows::RowRange;

use super::Outcome;
use crate::config::SplitPolicy;
use crate::output::{out_dir, write_json};

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Network description (JSON).
    #[arg(long)]
    pub network: PathBuf,
    /// `balanced`, `standalone`, or `e1,e0,e2` fractions.
    #[arg(long, default_value = "balanced")]
    pub ratios: String,
    /// Output directory for plan.json and transfers.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: PlanArgs) -> Result<Outcome> {
    let network = NetworkSpec::load(&args.network).with_context(|| format!("loading {}", args.network.display()))?;
    let (plan, transfers) = build(&network, &SplitPolicy::parse(&args.ratios)?)?;
    let dir = out_dir(args.out);
    write_json(&dir.join("plan.json"), &plan)?;
    write_json(&dir.join("transfers.json"), &transfers)?;
    print!("{}", table(&plan, &transfers));
    Ok(Outcome::Pass)
}

pub fn build(network: &NetworkSpec, split: &SplitPolicy) -> Result<(PartitionPlan, TransferPlan)> {
    let ratios = split.ratios(network)?;
    let plan = plan_partition(network, &ratios).context("invalid split ratios")?;
    plan.verify_coverage(network).context("plan fails the coverage invariant")?;
    let transfers = transfer_sizes_oracle(&plan, network).context("plan fails the row-ownership invariant")?;
    Ok((plan, transfers))
}

fn rows(r: Option<RowRange>) -> String {
    match r {
        Some(r) if !r.is_empty() => format!("{}-{}", r.start, r.end),
        _ => "-".into(),
    }
}

/// One line per layer: output rows and input rows of each server, then the
/// bytes each server sends after the layer.
pub fn table(plan: &PartitionPlan, transfers: &TransferPlan) -> String {
    let servers = [ServerId::Secondary(1), ServerId::Host, ServerId::Secondary(2)];
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5} {:<7} {:>9} {:>14} {:>14} {:>14} {:>12} {:>12} {:>12}",
        "layer", "kind", "in->out", "e1 out/in", "e0 out/in", "e2 out/in", "e1 sends", "e0 sends", "e2 sends"
    );
    for (lp, lt) in plan.layers.iter().zip(&transfers.layers) {
        let mut line = format!("{:>5} {:<7} {:>9}", lp.index, lp.kind.to_string(), format!("{}->{}", lp.dims.input, lp.dims.output));
        for s in servers {
            let cell = lp.slice(s).map_or("-".to_string(), |sl| format!("{}/{}", rows(Some(sl.out_rows)), rows(sl.in_rows)));
            let _ = write!(line, " {cell:>14}");
        }
        for s in servers {
            let bytes: i64 = lt.transfers.iter().filter(|t| t.from == s).map(|t| t.bytes).sum();
            let _ = write!(line, " {bytes:>12}");
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "total bytes exchanged: {}", transfers.total_bytes());
    out
}
