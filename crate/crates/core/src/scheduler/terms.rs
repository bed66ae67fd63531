use serde::{Deserialize, Serialize};

use super::profile::{compute_time, DeviceProfile, LinkProfile};
use super::SchedError;
use crate::netspec::NetworkSpec;
use crate::partition::{PartitionPlan, ServerId, TransferPlan};

/// One secondary's work on one layer, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SecondaryTerms {
    /// Computing the rows the host needs from this secondary.
    pub t_cmp_boundary: f64,
    /// Sending them to the host (the full sub-output after the last layer).
    pub t_com: f64,
    /// Computing the rows only this secondary needs.
    pub t_cmp_own: f64,
}

/// The host's work for one secondary on one layer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HostLinkTerms {
    /// Computing the host rows this secondary needs.
    pub t_cmp: f64,
    /// Sending them.
    pub t_com: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HostTerms {
    /// One entry per secondary, in the order the host serves them.
    pub links: Vec<HostLinkTerms>,
    /// Host rows nobody else needs (every host row on the last layer).
    pub t_cmp_own: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerTerms {
    pub secondaries: Vec<SecondaryTerms>,
    pub host: HostTerms,
}

/// Everything the timeline recurrences consume.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingTerms {
    /// Image distribution to each secondary.
    pub t_int: Vec<f64>,
    pub layers: Vec<LayerTerms>,
    /// Whether the last entry of `layers` is the network's last spatial
    /// layer (so secondaries ship their whole sub-output after it). False
    /// for a leading excerpt such as the first two layers.
    pub ends_with_final_layer: bool,
}

impl TimingTerms {
    pub fn num_secondaries(&self) -> usize {
        self.t_int.len()
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        let k = self.num_secondaries();
        if k == 0 {
            return Err(SchedError::ClusterShape("terms describe no secondary servers".into()));
        }
        if self.layers.is_empty() {
            return Err(SchedError::Inconsistent("terms describe no layers".into()));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !self.t_int.iter().all(|&v| ok(v)) {
            return Err(SchedError::Inconsistent("t_int must be finite and non-negative".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.secondaries.len() != k || l.host.links.len() != k {
                return Err(SchedError::Inconsistent(format!(
                    "layer {i}: {} secondary and {} host-link entries for {k} secondaries",
                    l.secondaries.len(),
                    l.host.links.len()
                )));
            }
            let values = l
                .secondaries
                .iter()
                .flat_map(|s| [s.t_cmp_boundary, s.t_com, s.t_cmp_own])
                .chain(l.host.links.iter().flat_map(|h| [h.t_cmp, h.t_com]))
                .chain([l.host.t_cmp_own]);
            for v in values {
                if !ok(v) {
                    return Err(SchedError::Inconsistent(format!("layer {i}: term {v} is negative or not finite")));
                }
            }
        }
        Ok(())
    }

    /// Terms for several tasks served by one host: secondaries are listed
    /// task by task, and the host handles the tasks' zones in that order.
    pub fn combine(tasks: &[TimingTerms]) -> Result<TimingTerms, SchedError> {
        let first = tasks.first().ok_or_else(|| SchedError::ClusterShape("no tasks".into()))?;
        for t in tasks {
            t.validate()?;
            if t.layers.len() != first.layers.len() || t.ends_with_final_layer != first.ends_with_final_layer {
                return Err(SchedError::Inconsistent("tasks disagree on the layer sequence".into()));
            }
        }
        let layers = (0..first.layers.len())
            .map(|i| LayerTerms {
                secondaries: tasks.iter().flat_map(|t| t.layers[i].secondaries.iter().copied()).collect(),
                host: HostTerms {
                    links: tasks.iter().flat_map(|t| t.layers[i].host.links.iter().copied()).collect(),
                    t_cmp_own: tasks.iter().map(|t| t.layers[i].host.t_cmp_own).sum(),
                },
            })
            .collect();
        Ok(TimingTerms {
            t_int: tasks.iter().flat_map(|t| t.t_int.iter().copied()).collect(),
            layers,
            ends_with_final_layer: first.ends_with_final_layer,
        })
    }
}

/// Derives the timing terms of a plan from its transfers, a compute
/// profile and a link. Secondaries `e1..eK` map to entries `0..K-1`.
///
/// On every layer but the last, a secondary's boundary rows are the
/// distinct rows it sends to the host and its own rows are the rest; the
/// host's rows for `ek` are those it sends to `ek` (rows already counted
/// for an earlier secondary are not computed twice). On the last layer
/// secondaries compute everything and ship it, and the host computes its
/// whole band.
pub fn derive_terms(
    network: &NetworkSpec,
    plan: &PartitionPlan,
    transfers: &TransferPlan,
    profile: &DeviceProfile,
    link: &LinkProfile,
) -> Result<TimingTerms, SchedError> {
    let secondaries = plan.secondaries();
    if secondaries.is_empty() {
        return Err(SchedError::ClusterShape("plan has no secondary servers".into()));
    }
    if transfers.layers.len() != plan.layers.len() || plan.layers.len() != network.num_spatial() {
        return Err(SchedError::Inconsistent("plan, transfers and network disagree on layer count".into()));
    }
    let time = |layer: usize, rows: usize| compute_time(network, layer, rows, profile);

    let t_int = secondaries.iter().map(|&s| link.send_time(transfers.initial_bytes(s))).collect();
    let last = plan.layers.len() - 1;
    let mut layers = Vec::with_capacity(plan.layers.len());
    for (i, lp) in plan.layers.iter().enumerate() {
        let mut terms = LayerTerms::default();
        for &s in &secondaries {
            let total = lp.out_rows(s).len();
            let sent = if i == last { 0 } else { transfers.rows_sent_by(i, s).len() };
            terms.secondaries.push(SecondaryTerms {
                t_cmp_boundary: time(i, sent)?,
                t_com: link.send_time(transfers.bytes_from(i, s)),
                t_cmp_own: time(i, total - sent)?,
            });
        }
        let host_rows = lp.out_rows(ServerId::Host);
        let mut counted: Vec<usize> = Vec::new();
        for &s in &secondaries {
            let fresh: Vec<usize> = if i == last {
                Vec::new()
            } else {
                transfers.rows_between(i, ServerId::Host, s).into_iter().filter(|r| !counted.contains(r)).collect()
            };
            terms.host.links.push(HostLinkTerms {
                t_cmp: time(i, fresh.len())?,
                t_com: link.send_time(transfers.bytes(i, ServerId::Host, s)),
            });
            counted.extend(fresh);
        }
        counted.sort_unstable();
        counted.dedup();
        terms.host.t_cmp_own = time(i, host_rows.len() - counted.len())?;
        layers.push(terms);
    }
    Ok(TimingTerms { t_int, layers, ends_with_final_layer: true })
}
