use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use halp::netspec::{toy_network, NetworkSpec};
use halp::partition::{transfer_sizes_oracle, PartitionError, PartitionPlan};
use halp::tensor::{apply_mutation, check_equivalence, check_mutation, mutations, Mutation, TensorError};

use super::Outcome;
use crate::config::SplitPolicy;
use crate::output::{out_dir, write_json};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Network description (JSON).
    #[arg(long)]
    pub network: PathBuf,
    /// `balanced`, `standalone`, or `e1,e0,e2` fractions.
    #[arg(long, default_value = "balanced")]
    pub ratios: String,
    /// Verify this plan (as written by `plan`) instead of building one.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Seed for weights and the input image.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Also verify this many random toy networks (seeds `seed..seed+n`).
    #[arg(long, default_value_t = 0)]
    pub sizes: u64,
    /// Cap on mutation runs per network, spread evenly over all candidates.
    #[arg(long, default_value_t = 64)]
    pub max_mutations: usize,
    /// Start one slice's input interval a row late before verifying; the
    /// run is then expected to fail.
    #[arg(long)]
    pub mutate: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct CaseReport {
    network: String,
    seed: u64,
    passed: bool,
    max_abs_diff: Option<f32>,
    bitwise_equal: bool,
    error: Option<String>,
    injected: Option<Mutation>,
    mutations_run: usize,
    mutations_detected: usize,
    undetected: Vec<Mutation>,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    passed: bool,
    cases: Vec<CaseReport>,
}

pub fn run(args: VerifyArgs) -> Result<Outcome> {
    let network = NetworkSpec::load(&args.network).with_context(|| format!("loading {}", args.network.display()))?;
    let split = SplitPolicy::parse(&args.ratios)?;
    let plan = match &args.plan {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let plan: PartitionPlan = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if plan.layers.len() != network.num_spatial() {
                anyhow::bail!("plan has {} layers, network has {}", plan.layers.len(), network.num_spatial());
            }
            plan
        }
        None => super::plan::build(&network, &split)?.0,
    };

    let mut cases = vec![verify_case(&network, plan, args.seed, args.max_mutations, args.mutate)?];
    for seed in args.seed..args.seed + args.sizes {
        let toy = toy_network(seed);
        let (plan, _) = super::plan::build(&toy, &split)?;
        cases.push(verify_case(&toy, plan, seed, args.max_mutations, false)?);
    }

    for c in &cases {
        let diff = c.max_abs_diff.map_or("n/a".to_string(), |d| d.to_string());
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {} seed={} max_abs_diff={diff} mutations_detected={}/{}",
            c.network, c.seed, c.mutations_detected, c.mutations_run
        );
        if let Some(e) = &c.error {
            println!("  {e}");
        }
        for m in &c.undetected {
            println!("  undetected mutation: {m:?}");
        }
    }
    let passed = cases.iter().all(|c| c.passed);
    write_json(&out_dir(args.out).join("verify.json"), &VerifyReport { passed, cases })?;
    Ok(if passed { Outcome::Pass } else { Outcome::Fail })
}

fn verify_case(network: &NetworkSpec, plan: PartitionPlan, seed: u64, max_mutations: usize, inject: bool) -> Result<CaseReport> {
    let transfers = transfer_sizes_oracle(&plan, network).ok();
    let (plan, injected) = match (inject, &transfers) {
        (true, Some(t)) => {
            let m = mutations(network, &plan, t)
                .into_iter()
                .filter(|m| matches!(m, Mutation::ShiftInputStart { .. }))
                .max_by_key(|m| matches!(m, Mutation::ShiftInputStart { layer, .. } if *layer > 0))
                .context("plan has no slice to mutate")?;
            (apply_mutation(&plan, t, m).0, Some(m))
        }
        _ => (plan, None),
    };

    let mut report = CaseReport {
        network: network.name.clone(),
        seed,
        passed: false,
        max_abs_diff: None,
        bitwise_equal: false,
        error: None,
        injected,
        mutations_run: 0,
        mutations_detected: 0,
        undetected: Vec::new(),
    };
    match check_equivalence(network, &plan, seed) {
        Ok(eq) => {
            report.max_abs_diff = Some(eq.max_abs_diff);
            report.bitwise_equal = eq.bitwise_equal;
        }
        Err(e @ (TensorError::MissingRows { .. } | TensorError::Partition(PartitionError::MissingRows { .. }))) => {
            report.error = Some(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(e.into()),
    }

    if injected.is_none() {
        let transfers = transfers.context("plan leaves a needed row uncomputed")?;
        let all = mutations(network, &plan, &transfers);
        let step = all.len().div_ceil(max_mutations.max(1)).max(1);
        for m in all.into_iter().step_by(step) {
            let outcome = check_mutation(network, &plan, &transfers, m, seed)?;
            report.mutations_run += 1;
            if outcome.detected() {
                report.mutations_detected += 1;
            } else {
                report.undetected.push(m);
            }
        }
    }
    report.passed = report.bitwise_equal && report.undetected.is_empty();
    Ok(report)
}
