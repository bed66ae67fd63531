//! Full-versus-partitioned equivalence checks and the mutations that must
//! break them.

use serde::{Deserialize, Serialize};

use super::{run_full, run_partitioned_with, MissingRowPolicy, Tensor3, TensorError, WeightSet};
use crate::netspec::NetworkSpec;
use crate::partition::{transfer_sizes_oracle, PartitionPlan, ServerId, Transfer, TransferPlan};
use crate::rows::RowRange;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    /// Largest element-wise difference between the two feature maps.
    pub max_abs_diff: f32,
    pub bitwise_equal: bool,
}

/// Runs `network` on a seeded image with seeded weights, once whole and
/// once under `plan`, and compares the final spatial feature maps.
pub fn check_equivalence(network: &NetworkSpec, plan: &PartitionPlan, seed: u64) -> Result<Equivalence, TensorError> {
    let (weights, image) = seeded_inputs(network, seed);
    let full = run_full(network, &weights, &image)?.features;
    let transfers = transfer_sizes_oracle(plan, network)?;
    let split = run_partitioned_with(network, &weights, &image, plan, &transfers, MissingRowPolicy::Error)?;
    compare(&full, &split)
}

fn seeded_inputs(network: &NetworkSpec, seed: u64) -> (WeightSet, Tensor3) {
    let weights = WeightSet::seeded_features(network, seed);
    let h = network.input_height;
    (weights, Tensor3::random(h, h, network.input_channels, seed.wrapping_add(1)))
}

fn compare(full: &Tensor3, split: &Tensor3) -> Result<Equivalence, TensorError> {
    let max_abs_diff = full
        .max_abs_diff(split)
        .ok_or_else(|| TensorError::Shape { layer: 0, reason: "partitioned output has the wrong shape".into() })?;
    Ok(Equivalence { max_abs_diff, bitwise_equal: full.bitwise_eq(split) })
}

/// A deliberate defect in a plan or its exchanges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    /// One row left out of one exchange (`layer` is `None` for the image
    /// distribution).
    DropRow { layer: Option<usize>, from: ServerId, to: ServerId, row: usize },
    /// A slice's input interval starts one row after its first needed row.
    ShiftInputStart { layer: usize, server: ServerId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationOutcome {
    pub mutation: Mutation,
    /// The strict run refused to proceed.
    pub missing_row: Option<String>,
    /// Difference when the gap is filled with zeros instead.
    pub zero_fill_diff: Option<f32>,
}

impl MutationOutcome {
    pub fn detected(&self) -> bool {
        self.missing_row.is_some() || self.zero_fill_diff.is_some_and(|d| d != 0.0)
    }
}

/// Every single-row drop of a row the receiver actually reads, plus one
/// input-start shift per slice that reads anything, in plan order.
///
/// An exchange may carry rows that no window of the receiver touches (the
/// image slice can be padded out to the receptive-field interval, and a
/// strided layer skips rows inside its dependency hull); dropping those
/// changes nothing, so they are left out.
pub fn mutations(network: &NetworkSpec, plan: &PartitionPlan, transfers: &TransferPlan) -> Vec<Mutation> {
    let specs = network.spatial_layers();
    // does layer `next` on server `to` read input row `row`?
    let reads = |next: usize, to: ServerId, row: usize| -> bool {
        let Some(lp) = plan.layers.get(next) else { return true };
        lp.slice(to).is_some_and(|s| s.out_rows.iter().any(|o| specs[next].clipped_window(o, lp.dims.input).contains(row)))
    };
    let mut out = Vec::new();
    let mut drops = |next: usize, layer: Option<usize>, ts: &[Transfer]| {
        for t in ts {
            if let Some(rows) = t.rows {
                out.extend(
                    rows.iter()
                        .filter(|&row| reads(next, t.to, row))
                        .map(|row| Mutation::DropRow { layer, from: t.from, to: t.to, row }),
                );
            }
        }
    };
    drops(0, None, &transfers.initial);
    for lt in &transfers.layers {
        drops(lt.layer + 1, Some(lt.layer), &lt.transfers);
    }
    for lp in &plan.layers {
        for s in &lp.slices {
            if s.needed_rows.is_some() && !s.out_rows.is_empty() {
                out.push(Mutation::ShiftInputStart { layer: lp.index, server: s.server });
            }
        }
    }
    out
}

/// Applies `mutation` to copies of `plan` and `transfers`.
pub fn apply_mutation(plan: &PartitionPlan, transfers: &TransferPlan, mutation: Mutation) -> (PartitionPlan, TransferPlan) {
    let (mut plan, mut transfers) = (plan.clone(), transfers.clone());
    match mutation {
        Mutation::DropRow { layer, from, to, row } => {
            let list = match layer {
                None => &mut transfers.initial,
                Some(i) => &mut transfers.layers[i].transfers,
            };
            let mut kept = Vec::with_capacity(list.len() + 1);
            for t in list.drain(..) {
                match t.rows {
                    Some(rows) if t.from == from && t.to == to && rows.contains(row) => {
                        for part in rows.minus(&RowRange::single(row)) {
                            let bytes = t.bytes / t.row_count.max(1) * part.len() as i64;
                            kept.push(Transfer { rows: Some(part), row_count: part.len() as i64, bytes, ..t });
                        }
                    }
                    _ => kept.push(t),
                }
            }
            *list = kept;
        }
        Mutation::ShiftInputStart { layer, server } => {
            if let Some(s) = plan.layers[layer].slice_mut(server) {
                if let (Some(needed), Some(input)) = (s.needed_rows, s.in_rows) {
                    s.in_rows = Some(RowRange::new(needed.start + 1, input.end.max(needed.start)));
                }
            }
        }
    }
    (plan, transfers)
}

/// Runs one mutation strictly and with zero fill.
pub fn check_mutation(
    network: &NetworkSpec,
    plan: &PartitionPlan,
    transfers: &TransferPlan,
    mutation: Mutation,
    seed: u64,
) -> Result<MutationOutcome, TensorError> {
    let (weights, image) = seeded_inputs(network, seed);
    let full = run_full(network, &weights, &image)?.features;
    let (plan, transfers) = apply_mutation(plan, transfers, mutation);
    let missing_row = match run_partitioned_with(network, &weights, &image, &plan, &transfers, MissingRowPolicy::Error) {
        Err(e @ TensorError::MissingRows { .. }) => Some(e.to_string()),
        Err(e) => return Err(e),
        Ok(_) => None,
    };
    let zero_fill_diff = match run_partitioned_with(network, &weights, &image, &plan, &transfers, MissingRowPolicy::ZeroFill) {
        Ok(out) => Some(compare(&full, &out)?.max_abs_diff),
        // a dropped final-layer row leaves the assembled output incomplete
        Err(TensorError::MissingRows { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(MutationOutcome { mutation, missing_row, zero_fill_diff })
}
