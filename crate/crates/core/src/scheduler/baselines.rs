use serde::{Deserialize, Serialize};

use super::profile::{compute_time, DeviceProfile, LinkProfile};
use super::terms::TimingTerms;
use super::SchedError;
use crate::netspec::NetworkSpec;
use crate::partition::ServerId;
use crate::rows::RowRange;

/// One layer of the conventional schedule, where every server exchanges
/// data and computes strictly one after the other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConventionalLayer {
    /// Communication plus computation on the slowest server.
    pub total: f64,
    pub comm: f64,
    pub compute: f64,
    pub critical: ServerId,
}

impl ConventionalLayer {
    pub fn comm_share(&self) -> f64 {
        if self.total > 0.0 {
            self.comm / self.total
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConventionalTimeline {
    pub layers: Vec<ConventionalLayer>,
    pub t_fls: f64,
    pub latency: f64,
}

/// The conventional layer-wise schedule over the same terms: each layer
/// is a barrier, and each server's layer time is the plain sum of its
/// communication and computation terms.
pub fn baseline_conventional(terms: &TimingTerms, t_fls: f64) -> Result<ConventionalTimeline, SchedError> {
    terms.validate()?;
    let mut layers = Vec::with_capacity(terms.layers.len());
    for (i, lt) in terms.layers.iter().enumerate() {
        let host_comm: f64 = lt.host.links.iter().map(|l| l.t_com).sum();
        let host_compute: f64 = lt.host.links.iter().map(|l| l.t_cmp).sum::<f64>() + lt.host.t_cmp_own;
        let mut best = ConventionalLayer {
            total: host_comm + host_compute,
            comm: host_comm,
            compute: host_compute,
            critical: ServerId::Host,
        };
        for (j, s) in lt.secondaries.iter().enumerate() {
            let comm = if i == 0 { terms.t_int[j] } else { 0.0 } + s.t_com;
            let compute = s.t_cmp_boundary + s.t_cmp_own;
            if comm + compute > best.total {
                best = ConventionalLayer { total: comm + compute, comm, compute, critical: ServerId::Secondary(j + 1) };
            }
        }
        layers.push(best);
    }
    let latency = layers.iter().map(|l| l.total).sum::<f64>() + t_fls;
    Ok(ConventionalTimeline { layers, t_fls, latency })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModnnVariant {
    /// Tasks one after another, each on every server.
    Original,
    /// `n - 1` tasks side by side on equal server groups, then the last
    /// task on every server.
    Enhanced,
}

/// Single-task MoDNN inference times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModnnTimes {
    /// One task on the whole cluster.
    pub t_m: f64,
    /// One task on a group of `n_servers / (n_tasks - 1)` servers.
    pub t_m_e1: f64,
    /// One task on the whole cluster, as the last task of the enhanced batch.
    pub t_m_e2: f64,
}

/// Latency and rate figures for a batch of tasks under one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub scheme: String,
    pub n_tasks: usize,
    /// Time until the whole batch is done.
    pub batch_latency: f64,
    pub avg_delay: f64,
    /// Tasks per second.
    pub throughput: f64,
    /// Speedup ratio on the average delay.
    pub rho: f64,
    pub x_factor: f64,
}

impl BatchSummary {
    fn new(scheme: &str, n_tasks: usize, batch_latency: f64, avg_delay: f64, t_pre: f64) -> Result<Self, SchedError> {
        let s = speedup(avg_delay, t_pre)?;
        Ok(Self {
            scheme: scheme.into(),
            n_tasks,
            batch_latency,
            avg_delay,
            throughput: n_tasks as f64 / batch_latency,
            rho: s.rho,
            x_factor: s.x_factor,
        })
    }
}

/// MoDNN batch figures. Original: task `m` finishes at `m·T_M`, so the
/// average delay is `(n+1)/2·T_M`. Enhanced: the first `n-1` tasks finish
/// together at `T_E1` and the last at `T_E1 + T_E2`.
pub fn baseline_modnn(
    variant: ModnnVariant,
    n_tasks: usize,
    n_servers: usize,
    times: &ModnnTimes,
    t_pre: f64,
) -> Result<BatchSummary, SchedError> {
    if n_tasks == 0 || n_servers == 0 {
        return Err(SchedError::ClusterShape("need at least one task and one server".into()));
    }
    let n = n_tasks as f64;
    match variant {
        ModnnVariant::Original => {
            BatchSummary::new("modnn_original", n_tasks, n * times.t_m, (n + 1.0) / 2.0 * times.t_m, t_pre)
        }
        ModnnVariant::Enhanced if n_tasks == 1 => {
            BatchSummary::new("modnn_enhanced", 1, times.t_m_e2, times.t_m_e2, t_pre)
        }
        ModnnVariant::Enhanced => {
            if n_servers % (n_tasks - 1) != 0 {
                return Err(SchedError::ClusterShape(format!(
                    "{n_servers} servers cannot form {} equal groups",
                    n_tasks - 1
                )));
            }
            let batch = times.t_m_e1 + times.t_m_e2;
            BatchSummary::new("modnn_enhanced", n_tasks, batch, times.t_m_e1 + times.t_m_e2 / n, t_pre)
        }
    }
}

/// The whole batch processed on one server in `t_pre`.
pub fn baseline_standalone(n_tasks: usize, t_pre: f64) -> Result<BatchSummary, SchedError> {
    if n_tasks == 0 {
        return Err(SchedError::ClusterShape("need at least one task".into()));
    }
    BatchSummary::new("standalone", n_tasks, t_pre, t_pre, t_pre)
}

/// HALP batch figures: every task finishes with the batch.
pub fn halp_summary(n_tasks: usize, batch_latency: f64, t_pre: f64) -> Result<BatchSummary, SchedError> {
    if n_tasks == 0 {
        return Err(SchedError::ClusterShape("need at least one task".into()));
    }
    BatchSummary::new("halp", n_tasks, batch_latency, batch_latency, t_pre)
}

/// MoDNN on `servers` servers: before each layer the host sends every other
/// server the input rows of its equal output band, then all compute, then
/// all return their outputs. Each server has its own link to the host, so
/// a layer's exchange takes as long as the largest per-server message.
pub fn modnn_task_time(
    network: &NetworkSpec,
    profile: &DeviceProfile,
    link: &LinkProfile,
    servers: usize,
) -> Result<f64, SchedError> {
    if servers == 0 {
        return Err(SchedError::ClusterShape("MoDNN needs at least one server".into()));
    }
    let specs = network.spatial_layers();
    let mut total = 0.0;
    for (i, d) in network.spatial_dims()?.iter().enumerate() {
        let spec = &specs[i];
        let (mut scatter, mut compute, mut gather): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for m in 0..servers {
            let start = d.output * m / servers + 1;
            let end = d.output * (m + 1) / servers;
            if end < start {
                continue;
            }
            compute = compute.max(compute_time(network, i, end - start + 1, profile)?);
            if m == 0 {
                continue; // the host's own band stays put
            }
            let rows = RowRange::new(start, end);
            let input = spec.dependency(&rows, d.input).map_or(0, |r| r.len());
            scatter = scatter.max(link.send_time((4 * input * d.input * spec.c_in) as i64));
            gather = gather.max(link.send_time((4 * rows.len() * d.output * spec.c_out) as i64));
        }
        total += scatter + compute + gather;
    }
    Ok(total + profile.t_fls)
}

/// MoDNN single-task times for a batch of `n_tasks` on `n_servers`.
pub fn modnn_times(
    network: &NetworkSpec,
    profile: &DeviceProfile,
    link: &LinkProfile,
    n_tasks: usize,
    n_servers: usize,
) -> Result<ModnnTimes, SchedError> {
    let t_m = modnn_task_time(network, profile, link, n_servers)?;
    let group = if n_tasks > 1 { n_servers / (n_tasks - 1) } else { n_servers };
    Ok(ModnnTimes { t_m, t_m_e1: modnn_task_time(network, profile, link, group.max(1))?, t_m_e2: t_m })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    /// `1 - latency / t_pre`.
    pub rho: f64,
    /// `t_pre / latency`.
    pub x_factor: f64,
}

pub fn speedup(latency: f64, t_pre: f64) -> Result<Speedup, SchedError> {
    if !(t_pre > 0.0) || !(latency > 0.0) {
        return Err(SchedError::Inconsistent(format!("speedup needs positive times, got {latency} and {t_pre}")));
    }
    Ok(Speedup { rho: 1.0 - latency / t_pre, x_factor: t_pre / latency })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::terms::{HostLinkTerms, HostTerms, LayerTerms, SecondaryTerms};

    #[test]
    fn modnn_reference_figures() {
        let times = ModnnTimes { t_m: 1.89e-3, t_m_e1: 3.13e-3, t_m_e2: 1.89e-3 };
        let original = baseline_modnn(ModnnVariant::Original, 4, 9, &times, 4.7e-3).unwrap();
        assert_eq!(original.throughput.round(), 529.0);
        assert!((original.avg_delay - 2.5 * 1.89e-3).abs() < 1e-15);
        let enhanced = baseline_modnn(ModnnVariant::Enhanced, 4, 9, &times, 4.7e-3).unwrap();
        assert!((enhanced.avg_delay - 3.6025e-3).abs() < 1e-12);
        assert_eq!(enhanced.throughput.round(), 797.0);
        assert!((enhanced.rho - 0.233).abs() < 1e-3);
        assert!(baseline_modnn(ModnnVariant::Enhanced, 4, 8, &times, 4.7e-3).is_err());
    }

    #[test]
    fn one_task_modnn_variants_agree() {
        let times = ModnnTimes { t_m: 2e-3, t_m_e1: 5e-3, t_m_e2: 2e-3 };
        let a = baseline_modnn(ModnnVariant::Original, 1, 9, &times, 4.7e-3).unwrap();
        let b = baseline_modnn(ModnnVariant::Enhanced, 1, 9, &times, 4.7e-3).unwrap();
        assert_eq!(a.avg_delay, 2e-3);
        assert_eq!(a.avg_delay, b.avg_delay);
    }

    #[test]
    fn speedup_examples() {
        let s = speedup(3.13e-3 + 1.89e-3 * 0.25, 4.7e-3).unwrap();
        assert!((s.rho - 0.233).abs() < 1e-3);
        assert_eq!(speedup(4.7e-3, 4.7e-3).unwrap().rho, 0.0);
        assert!((speedup(2.81e-3, 4.7e-3).unwrap().x_factor - 1.6726).abs() < 1e-3);
        assert_eq!(baseline_standalone(4, 4.7e-3).unwrap().throughput.round(), 851.0);
        assert_eq!(halp_summary(4, 2.81e-3, 4.7e-3).unwrap().throughput.round(), 1423.0);
    }

    #[test]
    fn conventional_without_comm_is_compute_only() {
        let terms = TimingTerms {
            t_int: vec![0.0, 0.0],
            layers: vec![LayerTerms {
                secondaries: vec![SecondaryTerms { t_cmp_boundary: 1.0, t_com: 0.0, t_cmp_own: 2.0 }; 2],
                host: HostTerms { links: vec![HostLinkTerms::default(); 2], t_cmp_own: 0.5 },
            }],
            ends_with_final_layer: true,
        };
        let c = baseline_conventional(&terms, 0.0).unwrap();
        assert_eq!(c.latency, 3.0);
        assert_eq!(c.layers[0].comm_share(), 0.0);
    }
}
