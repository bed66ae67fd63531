use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use halp::fixtures::{load_json, Table1Fixture};
use halp::netspec::NetworkSpec;
use halp::partition::{plan_partition, transfer_sizes_oracle};
use halp::reliability::{reliability_closed_form, DeadlineSpec, OffloadModel};
use halp::scheduler::{
    baseline_conventional, baseline_modnn, baseline_standalone, derive_terms, halp_multi_timeline, halp_summary,
    modnn_times, BatchSummary, DeviceProfile, LinkProfile, ModnnTimes, ModnnVariant, TimingTerms,
};

use super::report::Check;
use super::Outcome;
use crate::config::{parse_rates, ScenarioConfig, Scheme, SplitPolicy};
use crate::output::{out_dir, write_csv, write_json};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario file (JSON); the flags below override its fields.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Link rates in Gbps, comma-separated.
    #[arg(long)]
    pub rates: Option<String>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub scheme: Vec<Scheme>,
    /// `balanced`, `standalone`, or `e1,e0,e2` fractions.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Per-layer completion figures of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerLine {
    pub layer: usize,
    /// HALP: latest completion over all servers. Conventional: layer time.
    pub time_ms: f64,
    #[serde(default)]
    pub host_end_ms: Option<f64>,
    #[serde(default)]
    pub comm_ms: Option<f64>,
    #[serde(default)]
    pub comm_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub rate_gbps: Option<f64>,
    pub n_tasks: usize,
    pub batch_latency_ms: f64,
    pub avg_delay_ms: f64,
    pub throughput_fps: f64,
    pub rho: f64,
    pub x_factor: f64,
    #[serde(default)]
    pub reliability: Option<f64>,
    #[serde(default)]
    pub layers: Vec<LayerLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenario: String,
    pub network: Option<String>,
    pub profile: Option<String>,
    pub n_tasks: usize,
    pub n_servers: usize,
    pub split: SplitPolicy,
    pub runs: Vec<RunSummary>,
    pub checks: Vec<Check>,
}

/// One Gantt bar, times in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub scheme: Scheme,
    pub rate_gbps: Option<f64>,
    pub task: Option<usize>,
    pub server: String,
    pub layer: usize,
    pub kind: String,
    pub start_ms: f64,
    pub end_ms: f64,
    pub peer: Option<String>,
}

pub fn run(args: SimulateArgs) -> Result<Outcome> {
    let mut config = match &args.scenario {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig { name: Some("simulation".into()), ..ScenarioConfig::default() },
    };
    if args.network.is_some() {
        config.network = args.network;
    }
    if args.profile.is_some() {
        config.profile = args.profile;
    }
    if let Some(r) = &args.rates {
        config.rates_gbps = parse_rates(r)?;
    }
    if let Some(n) = args.tasks {
        config.n_tasks = n;
    }
    if !args.scheme.is_empty() {
        config.schemes = args.scheme;
    }
    if let Some(s) = &args.split {
        config.split = SplitPolicy::parse(s)?;
    }
    let (summary, events) = simulate(&config)?;
    let dir = out_dir(args.out);
    write_json(&dir.join(&config.outputs.summary), &summary)?;
    write_csv(&dir.join(&config.outputs.events), &events)?;
    for r in &summary.runs {
        let rate = r.rate_gbps.map_or("-".into(), |g| format!("{g} Gbps"));
        println!(
            "{:<15} {:>9}  latency {:>8.4} ms  avg {:>8.4} ms  {:>8.1} fps  rho {:>6.3}  x{:.2}",
            r.scheme.name(),
            rate,
            r.batch_latency_ms,
            r.avg_delay_ms,
            r.throughput_fps,
            r.rho,
            r.x_factor
        );
    }
    for c in &summary.checks {
        println!("table {} {}: {:.6} (reference {}, |delta| {:.3e})", c.table, c.cell, c.value, c.reference, c.abs_delta);
    }
    Ok(Outcome::Pass)
}

struct Inputs {
    network: Option<NetworkSpec>,
    profile: Option<DeviceProfile>,
    measured: Option<Table1Fixture>,
    t_pre: f64,
    t_fls: f64,
}

/// Evaluates every scheme of `config` at every rate.
pub fn simulate(config: &ScenarioConfig) -> Result<(SimulationSummary, Vec<EventRow>)> {
    config.validate()?;
    let network = config.load_network()?;
    let profile = config.load_profile(network.as_ref())?;
    let measured: Option<Table1Fixture> =
        config.terms.as_ref().map(|p| load_json(p).map_err(anyhow::Error::msg)).transpose()?;
    let t_pre = config.t_pre_ms.map(|t| t * 1e-3).or(profile.as_ref().map(|p| p.t_pre)).context("no t_pre")?;
    let t_fls = profile.as_ref().map_or(0.0, |p| p.t_fls);
    let cx = Inputs { network, profile, measured, t_pre, t_fls };

    // every rate is independent; evaluate them side by side
    let rates: Vec<Option<f64>> =
        if config.rates_gbps.is_empty() { vec![None] } else { config.rates_gbps.iter().map(|&r| Some(r)).collect() };
    let per_rate: Vec<Result<Vec<(RunSummary, Vec<EventRow>)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = rates
            .iter()
            .enumerate()
            .map(|(i, &rate)| {
                let cx = &cx;
                scope.spawn(move || evaluate_rate(config, cx, rate, i == 0))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });

    let mut runs = Vec::new();
    let mut events = Vec::new();
    for result in per_rate {
        for (run, ev) in result? {
            runs.push(run);
            events.extend(ev);
        }
    }
    // group by scheme, keeping the rate order
    runs.sort_by_key(|r| config.schemes.iter().position(|s| *s == r.scheme));
    let checks = checks(config, &cx, &runs);
    let summary = SimulationSummary {
        scenario: config.name.clone().unwrap_or_default(),
        network: cx.network.as_ref().map(|n| n.name.clone()),
        profile: cx.profile.as_ref().map(|p| p.name.clone()),
        n_tasks: config.n_tasks,
        n_servers: config.n_servers,
        split: config.split.clone(),
        runs,
        checks,
    };
    Ok((summary, events))
}

/// Runs at one rate. Schemes fed measured times do not depend on the rate
/// and are only evaluated once, with the first.
fn evaluate_rate(
    config: &ScenarioConfig,
    cx: &Inputs,
    rate: Option<f64>,
    first: bool,
) -> Result<Vec<(RunSummary, Vec<EventRow>)>> {
    let n = config.n_tasks;
    let mut out = Vec::new();
    for &scheme in &config.schemes {
        let rate_free = match scheme {
            Scheme::Halp => config.halp_latency_ms.is_some() || cx.measured.is_some(),
            Scheme::Conventional => cx.measured.is_some(),
            Scheme::ModnnOriginal | Scheme::ModnnEnhanced => config.modnn_times_ms.is_some(),
            Scheme::Standalone => false,
        };
        if rate_free && !first {
            continue;
        }
        let run_rate = match (scheme, &cx.measured) {
            _ if !rate_free => rate,
            (Scheme::Halp, Some(m)) if config.halp_latency_ms.is_none() => Some(m.link_gbps),
            (Scheme::Conventional, Some(m)) => Some(m.link_gbps),
            _ => None,
        };
        let mut layers = Vec::new();
        let mut events = Vec::new();
        let summary: BatchSummary = match scheme {
            Scheme::Halp => {
                if let Some(ms) = config.halp_latency_ms {
                    halp_summary(n, ms * 1e-3, cx.t_pre)?
                } else {
                    let terms = terms_for(config, cx, rate)?;
                    let k = terms.num_secondaries();
                    let timeline = halp_multi_timeline(&vec![terms; n], k * n, cx.t_fls)?;
                    layers = (0..timeline.layer_end.len())
                        .map(|i| LayerLine {
                            layer: i,
                            time_ms: timeline.layer_end[i] * 1e3,
                            host_end_ms: Some(timeline.host_end(i) * 1e3),
                            comm_ms: None,
                            comm_share: None,
                        })
                        .collect();
                    events = timeline
                        .events
                        .iter()
                        .map(|e| EventRow {
                            scheme,
                            rate_gbps: run_rate,
                            task: e.task,
                            server: e.server.to_string(),
                            layer: e.layer,
                            kind: serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                            start_ms: e.start * 1e3,
                            end_ms: e.end * 1e3,
                            peer: e.peer.map(|p| p.to_string()),
                        })
                        .collect();
                    halp_summary(n, timeline.latency, cx.t_pre)?
                }
            }
            Scheme::Conventional => {
                let conv = baseline_conventional(&terms_for(config, cx, rate)?, cx.t_fls)?;
                layers = conv
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(i, l)| LayerLine {
                        layer: i,
                        time_ms: l.total * 1e3,
                        host_end_ms: None,
                        comm_ms: Some(l.comm * 1e3),
                        comm_share: Some(l.comm_share()),
                    })
                    .collect();
                // tasks one after another, each on the whole cluster
                let times = ModnnTimes { t_m: conv.latency, t_m_e1: conv.latency, t_m_e2: conv.latency };
                let mut s = baseline_modnn(ModnnVariant::Original, n, config.n_servers, &times, cx.t_pre)?;
                s.scheme = scheme.name().into();
                s
            }
            Scheme::ModnnOriginal | Scheme::ModnnEnhanced => {
                let times = match config.modnn_times_ms {
                    Some(t) => t.into(),
                    None => modnn_times(net(cx)?, prof(cx)?, &link(rate)?, n, config.n_servers)?,
                };
                let variant = if scheme == Scheme::ModnnOriginal { ModnnVariant::Original } else { ModnnVariant::Enhanced };
                baseline_modnn(variant, n, config.n_servers, &times, cx.t_pre)?
            }
            Scheme::Standalone => baseline_standalone(n, cx.t_pre)?,
        };
        let reliability = config
            .offload
            .map(|o| -> Result<f64> {
                let model = OffloadModel::new(o.rate_mbps * 1e6, o.payload_bits, o.sigma_ms * 1e-3)?;
                Ok(reliability_closed_form(&model, &DeadlineSpec::new(o.deadline_ms * 1e-3, summary.batch_latency)?))
            })
            .transpose()?;
        out.push((
            RunSummary {
                scheme,
                rate_gbps: run_rate,
                n_tasks: n,
                batch_latency_ms: summary.batch_latency * 1e3,
                avg_delay_ms: summary.avg_delay * 1e3,
                throughput_fps: summary.throughput,
                rho: summary.rho,
                x_factor: summary.x_factor,
                reliability,
                layers,
            },
            events,
        ));
    }
    Ok(out)
}

fn net(cx: &Inputs) -> Result<&NetworkSpec> {
    cx.network.as_ref().context("scenario has no network")
}

fn prof(cx: &Inputs) -> Result<&DeviceProfile> {
    cx.profile.as_ref().context("scenario has no device profile")
}

fn link(rate: Option<f64>) -> Result<LinkProfile> {
    Ok(LinkProfile::gbps(rate.context("scenario has no link rate")?)?)
}

fn terms_for(config: &ScenarioConfig, cx: &Inputs, rate: Option<f64>) -> Result<TimingTerms> {
    if let Some(m) = &cx.measured {
        return Ok(m.terms.clone());
    }
    let network = net(cx)?;
    let plan = plan_partition(network, &config.split.ratios(network)?)?;
    let transfers = transfer_sizes_oracle(&plan, network)?;
    Ok(derive_terms(network, &plan, &transfers, prof(cx)?, &link(rate)?)?)
}

fn checks(config: &ScenarioConfig, cx: &Inputs, runs: &[RunSummary]) -> Vec<Check> {
    let mut out = Vec::new();
    if let Some(m) = &cx.measured {
        let r = &m.reference;
        if let Some(conv) = runs.iter().find(|r| r.scheme == Scheme::Conventional) {
            for (i, l) in conv.layers.iter().enumerate() {
                if let Some(&reference) = r.conventional_ms.get(i) {
                    out.push(Check::new("I", format!("conventional g{} ms", i + 1), l.time_ms, reference));
                }
                if let (Some(&reference), Some(share)) = (r.comm_share.get(i), l.comm_share) {
                    out.push(Check::new("I", format!("conventional g{} comm share", i + 1), share, reference));
                }
            }
        }
        if let Some(h) = runs.iter().find(|r| r.scheme == Scheme::Halp).and_then(|h| h.layers.first()) {
            if let Some(end) = h.host_end_ms {
                out.push(Check::new("I", "halp e0 end g1 ms".into(), end, r.host_end_g1_ms));
            }
        }
    }
    if let Some(reference) = &config.reference {
        let table = reference.table.clone().unwrap_or_else(|| "II".into());
        for (scheme, values) in &reference.throughput_fps {
            for (i, run) in runs.iter().filter(|r| r.scheme == *scheme).enumerate() {
                if let Some(&v) = values.get(i) {
                    let at = run.rate_gbps.map_or(String::new(), |g| format!(" @ {g} Gbps"));
                    out.push(Check::new(&table, format!("{} fps{at}", scheme.name()), run.throughput_fps, v));
                }
            }
        }
        for (scheme, &v) in &reference.rho {
            if let Some(run) = runs.iter().find(|r| r.scheme == *scheme) {
                out.push(Check::new(&table, format!("{} rho", scheme.name()), run.rho, v));
            }
        }
    }
    out
}
