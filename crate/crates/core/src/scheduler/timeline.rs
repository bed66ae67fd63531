use serde::{Deserialize, Serialize};

use super::terms::{LayerTerms, SecondaryTerms, TimingTerms};
use super::SchedError;
use crate::partition::ServerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ComputeBoundary,
    ComputeOwn,
    Send,
    Receive,
    Wait,
}

/// One bar of a Gantt chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanttEvent {
    /// 1-based task the work belongs to; `None` for host work spanning tasks.
    pub task: Option<usize>,
    pub server: ServerId,
    /// Spatial layer index, 0-based.
    pub layer: usize,
    pub kind: EventKind,
    pub start: f64,
    pub end: f64,
    /// The other end of a send or receive.
    pub peer: Option<ServerId>,
}

/// Completion instants of a HALP schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    /// Per layer: host completion, then each secondary's.
    pub server_end: Vec<Vec<f64>>,
    /// Per layer: latest completion over all servers.
    pub layer_end: Vec<f64>,
    pub t_fls: f64,
    /// `layer_end` of the last layer plus `t_fls`.
    pub latency: f64,
    pub events: Vec<GanttEvent>,
}

impl Timeline {
    pub fn host_end(&self, layer: usize) -> f64 {
        self.server_end[layer][0]
    }

    /// Completion of secondary `k` (1-based).
    pub fn secondary_end(&self, layer: usize, k: usize) -> f64 {
        self.server_end[layer][k]
    }
}

/// Time a secondary spends on one layer: its boundary rows first, then
/// sending them while it computes the rest (plus the image transfer on the
/// first layer).
pub fn secondary_layer_time(terms: &SecondaryTerms, t_int: Option<f64>) -> f64 {
    t_int.unwrap_or(0.0) + terms.t_cmp_boundary + terms.t_com.max(terms.t_cmp_own)
}

/// Time the host spends on one layer. Serving secondaries in order, the
/// host computes the rows for `ek`, starts sending them and moves on, so
/// the link to `ek` finishes at the prefix sum of compute terms up to `ek`
/// plus that send; its own rows come after all boundary rows. On the last
/// layer it only computes its band.
pub fn host_layer_time(terms: &LayerTerms, last: bool) -> f64 {
    if last {
        return terms.host.t_cmp_own;
    }
    let mut prefix = 0.0;
    let mut done: f64 = 0.0;
    for link in &terms.host.links {
        prefix += link.t_cmp;
        done = done.max(prefix + link.t_com);
    }
    done.max(prefix + terms.host.t_cmp_own)
}

/// Evaluates the HALP recurrences for one host and any number of
/// secondaries. The host finishes a layer once its own work is done and
/// every secondary's boundary rows (the whole sub-output after the last
/// layer) have arrived; a secondary runs on its own chain of layer times.
pub fn halp_timeline(terms: &TimingTerms, t_fls: f64) -> Result<Timeline, SchedError> {
    terms.validate()?;
    if !(t_fls >= 0.0) {
        return Err(SchedError::Inconsistent("t_fls must be non-negative".into()));
    }
    let k = terms.num_secondaries();
    let n = terms.layers.len();
    let tasks = k / 2;
    let task_of = |j: usize| (tasks > 0 && k % 2 == 0).then_some(j / 2 + 1);

    let mut host_prev = 0.0;
    let mut sec_prev = vec![0.0; k];
    let mut server_end = Vec::with_capacity(n);
    let mut layer_end = Vec::with_capacity(n);
    let mut events = Vec::new();

    for (i, lt) in terms.layers.iter().enumerate() {
        let first = i == 0;
        let last = terms.ends_with_final_layer && i + 1 == n;
        let t_host = host_layer_time(lt, last);

        let mut arrivals: f64 = 0.0;
        let mut sec_end = vec![0.0; k];
        for (j, s) in lt.secondaries.iter().enumerate() {
            let server = ServerId::Secondary(j + 1);
            let start = if first { terms.t_int[j] } else { sec_prev[j] };
            if first && terms.t_int[j] > 0.0 {
                events.push(event(task_of(j), server, i, EventKind::Receive, 0.0, start, Some(ServerId::Host)));
            }
            let boundary_done = start + s.t_cmp_boundary;
            push_busy(&mut events, task_of(j), server, i, EventKind::ComputeBoundary, start, boundary_done, None);
            let arrival = if last {
                let own_done = boundary_done + s.t_cmp_own;
                push_busy(&mut events, task_of(j), server, i, EventKind::ComputeOwn, boundary_done, own_done, None);
                push_busy(&mut events, task_of(j), server, i, EventKind::Send, own_done, own_done + s.t_com, Some(ServerId::Host));
                own_done + s.t_com
            } else {
                push_busy(&mut events, task_of(j), server, i, EventKind::Send, boundary_done, boundary_done + s.t_com, Some(ServerId::Host));
                push_busy(&mut events, task_of(j), server, i, EventKind::ComputeOwn, boundary_done, boundary_done + s.t_cmp_own, None);
                boundary_done + s.t_com
            };
            arrivals = arrivals.max(arrival);
            sec_end[j] = start + s.t_cmp_boundary + s.t_com.max(s.t_cmp_own);
        }

        let host_start = if first { 0.0 } else { host_prev };
        let host_done = host_start + t_host;
        host_events(&mut events, lt, last, i, host_start, &task_of);
        let host_end = host_done.max(arrivals);
        push_busy(&mut events, None, ServerId::Host, i, EventKind::Wait, host_done, host_end, None);

        let mut row = Vec::with_capacity(k + 1);
        row.push(host_end);
        row.extend(&sec_end);
        layer_end.push(row.iter().copied().fold(0.0, f64::max));
        server_end.push(row);
        host_prev = host_end;
        sec_prev = sec_end;
    }
    let latency = layer_end[n - 1] + t_fls;
    Ok(Timeline { server_end, layer_end, t_fls, latency, events })
}

/// HALP for several tasks at once: one host, a pair of secondaries per
/// task, the host handling the tasks' zones in task order.
pub fn halp_multi_timeline(tasks: &[TimingTerms], n_secondaries: usize, t_fls: f64) -> Result<Timeline, SchedError> {
    if tasks.is_empty() || n_secondaries != 2 * tasks.len() {
        return Err(SchedError::ClusterShape(format!(
            "{} tasks need {} secondaries, cluster has {n_secondaries}",
            tasks.len(),
            2 * tasks.len()
        )));
    }
    if let Some(t) = tasks.iter().find(|t| t.num_secondaries() != 2) {
        return Err(SchedError::ClusterShape(format!(
            "each task runs on a pair of secondaries, got {}",
            t.num_secondaries()
        )));
    }
    halp_timeline(&TimingTerms::combine(tasks)?, t_fls)
}

fn event(
    task: Option<usize>,
    server: ServerId,
    layer: usize,
    kind: EventKind,
    start: f64,
    end: f64,
    peer: Option<ServerId>,
) -> GanttEvent {
    GanttEvent { task, server, layer, kind, start, end, peer }
}

#[allow(clippy::too_many_arguments)]
fn push_busy(
    events: &mut Vec<GanttEvent>,
    task: Option<usize>,
    server: ServerId,
    layer: usize,
    kind: EventKind,
    start: f64,
    end: f64,
    peer: Option<ServerId>,
) {
    if end > start {
        events.push(event(task, server, layer, kind, start, end, peer));
    }
}

fn host_events(events: &mut Vec<GanttEvent>, lt: &LayerTerms, last: bool, layer: usize, start: f64, task_of: &dyn Fn(usize) -> Option<usize>) {
    let host = ServerId::Host;
    if last {
        push_busy(events, None, host, layer, EventKind::ComputeOwn, start, start + lt.host.t_cmp_own, None);
        return;
    }
    let mut t = start;
    for (j, link) in lt.host.links.iter().enumerate() {
        let peer = ServerId::Secondary(j + 1);
        push_busy(events, task_of(j), host, layer, EventKind::ComputeBoundary, t, t + link.t_cmp, Some(peer));
        t += link.t_cmp;
        push_busy(events, task_of(j), host, layer, EventKind::Send, t, t + link.t_com, Some(peer));
    }
    push_busy(events, None, host, layer, EventKind::ComputeOwn, t, t + lt.host.t_cmp_own, None);
}
