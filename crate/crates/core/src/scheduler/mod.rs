//! Timeline evaluation for host-assisted layer-wise parallel inference and
//! the schemes it is compared with.
//!
//! All times are in seconds and all rates in bits per second.

mod baselines;
mod profile;
mod terms;
mod timeline;

use thiserror::Error;

use crate::netspec::{NetSpecError, NetworkSpec};
use crate::partition::{plan_partition, transfer_sizes_oracle, PartitionError, SplitRatios};

pub use baselines::{
    baseline_conventional, baseline_modnn, baseline_standalone, halp_summary, modnn_task_time, modnn_times,
    speedup, BatchSummary, ConventionalLayer, ConventionalTimeline, ModnnTimes, ModnnVariant, Speedup,
};
pub use profile::{compute_time, layer_ops, DeviceProfile, LinkProfile, TimingMode};
pub use terms::{derive_terms, HostLinkTerms, HostTerms, LayerTerms, SecondaryTerms, TimingTerms};
pub use timeline::{
    halp_multi_timeline, halp_timeline, host_layer_time, secondary_layer_time, EventKind, GanttEvent, Timeline,
};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SchedError {
    #[error("profile {0} is not calibrated")]
    Uncalibrated(String),
    #[error("profile {profile}: {reason}")]
    InvalidProfile { profile: String, reason: String },
    #[error("layer time table covers {found} layers, network has {expected}")]
    TableCoverage { expected: usize, found: usize },
    #[error("inconsistent timing inputs: {0}")]
    Inconsistent(String),
    #[error("unsupported cluster: {0}")]
    ClusterShape(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    NetSpec(#[from] NetSpecError),
}

/// Terms for one task under the balanced three-band plan.
pub fn balanced_terms(network: &NetworkSpec, profile: &DeviceProfile, link: &LinkProfile) -> Result<TimingTerms, SchedError> {
    let plan = plan_partition(network, &SplitRatios::balanced(network)?)?;
    let transfers = transfer_sizes_oracle(&plan, network)?;
    derive_terms(network, &plan, &transfers, profile, link)
}

/// HALP batch of `n_tasks` identical tasks under the balanced plan, one
/// pair of secondaries per task.
pub fn halp_batch(
    network: &NetworkSpec,
    profile: &DeviceProfile,
    link: &LinkProfile,
    n_tasks: usize,
) -> Result<(Timeline, BatchSummary), SchedError> {
    let terms = balanced_terms(network, profile, link)?;
    let tasks = vec![terms; n_tasks];
    let timeline = halp_multi_timeline(&tasks, 2 * n_tasks, profile.t_fls)?;
    let summary = halp_summary(n_tasks, timeline.latency, profile.t_pre)?;
    Ok((timeline, summary))
}
