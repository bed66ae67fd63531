//! Row-segment partitioning of every spatial layer across the host and its
//! secondary servers, and the byte sizes of the exchanges that partition
//! implies.

mod plan;
mod ratios;
mod transfer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netspec::NetSpecError;

pub use plan::{input_range, plan_bands, plan_partition, split_output, LayerPlan, PartitionPlan, ServerSlice};
pub use ratios::{Split, SplitRatios};
pub use transfer::{
    compare_transfers, transfer_sizes_oracle, transfer_sizes_literal, LayerTransfers, Transfer,
    TransferDiscrepancy, TransferPlan,
};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PartitionError {
    #[error("layer {layer}: split ratios must sum to 1 (got {sum})")]
    RatioSum { layer: usize, sum: String },
    #[error("layer {layer}: split ratio {value} for {server} outside [0, 1]")]
    RatioRange { layer: usize, server: ServerId, value: String },
    #[error("layer {layer}: ratio for {server} does not give a whole number of the {rows} output rows")]
    NonIntegralSplit { layer: usize, server: ServerId, rows: usize },
    #[error("expected split ratios for {expected} spatial layers, got {found}")]
    LayerCount { expected: usize, found: usize },
    #[error("layer {layer}: bands must tile [1, {rows}] without gaps or overlap")]
    BadTiling { layer: usize, rows: usize },
    #[error("layer {layer}: literal size of link {link} is negative ({rows} rows)")]
    NegativeSize { layer: usize, link: String, rows: i64 },
    #[error("layer {layer}: row {row} needed by {server} is computed by no server")]
    MissingRows { layer: usize, server: ServerId, row: usize },
    #[error("literal transfer sizes need the three-band host/secondary layout")]
    NotThreeBand,
    #[error(transparent)]
    NetSpec(#[from] NetSpecError),
}

/// A server in the cluster: the host `e0` or a secondary `e1..eK`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ServerId {
    Host,
    Secondary(usize),
}

impl ServerId {
    pub fn index(self) -> usize {
        match self {
            ServerId::Host => 0,
            ServerId::Secondary(k) => k,
        }
    }

    pub fn is_host(self) -> bool {
        matches!(self, ServerId::Host)
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.index())
    }
}

impl FromStr for ServerId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let index: usize = s
            .strip_prefix('e')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| format!("bad server id {s:?}"))?;
        Ok(if index == 0 { ServerId::Host } else { ServerId::Secondary(index) })
    }
}

impl From<ServerId> for String {
    fn from(id: ServerId) -> Self {
        id.to_string()
    }
}

impl TryFrom<String> for ServerId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

pub(crate) const FLOAT_BYTES: usize = 4;
