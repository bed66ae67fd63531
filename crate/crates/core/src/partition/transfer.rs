use serde::{Deserialize, Serialize};

use super::plan::formula_bounds;
use super::{PartitionError, PartitionPlan, ServerId, FLOAT_BYTES};
use crate::netspec::{LayerKind, NetworkSpec};
use crate::rows::RowRange;

/// Rows moved over one link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: ServerId,
    pub to: ServerId,
    /// The rows moved, when known; literal size evaluation only yields counts.
    pub rows: Option<RowRange>,
    pub row_count: i64,
    pub bytes: i64,
}

/// Exchanges after computing one spatial layer: the rows of its output that
/// other servers need for the next layer, or (after the last spatial layer)
/// every secondary's full sub-output going to the host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTransfers {
    pub layer: usize,
    pub kind: LayerKind,
    pub to_fc: bool,
    pub transfers: Vec<Transfer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferPlan {
    /// Image slices sent from the host before the first layer.
    pub initial: Vec<Transfer>,
    pub layers: Vec<LayerTransfers>,
}

impl TransferPlan {
    pub fn initial_bytes(&self, to: ServerId) -> i64 {
        self.initial.iter().filter(|t| t.to == to).map(|t| t.bytes).sum()
    }

    pub fn bytes(&self, layer: usize, from: ServerId, to: ServerId) -> i64 {
        self.link(layer, from, to).map(|t| t.bytes).sum()
    }

    pub fn rows(&self, layer: usize, from: ServerId, to: ServerId) -> i64 {
        self.link(layer, from, to).map(|t| t.row_count).sum()
    }

    /// All bytes `from` sends after `layer`, to anyone.
    pub fn bytes_from(&self, layer: usize, from: ServerId) -> i64 {
        self.layers[layer].transfers.iter().filter(|t| t.from == from).map(|t| t.bytes).sum()
    }

    /// Distinct output rows of `layer` that `from` sends to anyone.
    pub fn rows_sent_by(&self, layer: usize, from: ServerId) -> Vec<usize> {
        let mut rows: Vec<usize> = self.layers[layer]
            .transfers
            .iter()
            .filter(|t| t.from == from)
            .filter_map(|t| t.rows)
            .flat_map(|r| r.iter())
            .collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    /// Rows of `layer` that `from` sends to `to`.
    pub fn rows_between(&self, layer: usize, from: ServerId, to: ServerId) -> Vec<usize> {
        self.link(layer, from, to).filter_map(|t| t.rows).flat_map(|r| r.iter()).collect()
    }

    fn link(&self, layer: usize, from: ServerId, to: ServerId) -> impl Iterator<Item = &Transfer> {
        self.layers[layer].transfers.iter().filter(move |t| t.from == from && t.to == to)
    }

    pub fn total_bytes(&self) -> i64 {
        self.initial.iter().chain(self.layers.iter().flat_map(|l| &l.transfers)).map(|t| t.bytes).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transfer plan serializes")
    }
}

fn row_bytes(width: usize, channels: usize) -> i64 {
    (FLOAT_BYTES * width * channels) as i64
}

fn transfer(from: ServerId, to: ServerId, rows: RowRange, width: usize, channels: usize) -> Transfer {
    let row_count = rows.len() as i64;
    Transfer { from, to, rows: Some(rows), row_count, bytes: row_count * row_bytes(width, channels) }
}

/// Transfer sizes from dependency analysis: each server receives exactly the
/// input rows it reads for the next layer but did not compute itself, from
/// whichever server computed them.
pub fn transfer_sizes_oracle(plan: &PartitionPlan, network: &NetworkSpec) -> Result<TransferPlan, PartitionError> {
    let specs = network.spatial_layers();
    let Some(first) = plan.layers.first() else {
        return Ok(TransferPlan { initial: Vec::new(), layers: Vec::new() });
    };

    let initial = first
        .slices
        .iter()
        .filter(|s| !s.server.is_host())
        .filter_map(|s| s.needed_rows.map(|rows| (s.server, rows)))
        .map(|(server, rows)| transfer(ServerId::Host, server, rows, first.dims.input, network.input_channels))
        .collect();

    let mut layers = Vec::with_capacity(plan.layers.len());
    for (i, lp) in plan.layers.iter().enumerate() {
        let width = lp.dims.output;
        let channels = specs[lp.index].c_out;
        let mut transfers = Vec::new();
        match plan.layers.get(i + 1) {
            Some(next) => {
                for dest in &next.slices {
                    let Some(needed) = dest.needed_rows else { continue };
                    let held = lp.out_rows(dest.server);
                    for piece in needed.minus(&held) {
                        let mut covered = 0;
                        for owner in lp.slices.iter().filter(|s| s.server != dest.server) {
                            if let Some(rows) = piece.intersect(&owner.out_rows) {
                                covered += rows.len();
                                transfers.push(transfer(owner.server, dest.server, rows, width, channels));
                            }
                        }
                        if covered != piece.len() {
                            let row = piece.iter().find(|&r| lp.owner_of(r).is_none()).unwrap_or(piece.start);
                            return Err(PartitionError::MissingRows { layer: lp.index + 1, server: dest.server, row });
                        }
                    }
                }
            }
            None => {
                for s in lp.slices.iter().filter(|s| !s.server.is_host() && !s.out_rows.is_empty()) {
                    transfers.push(transfer(s.server, ServerId::Host, s.out_rows, width, channels));
                }
            }
        }
        transfers.sort_by_key(|t| (t.from, t.to, t.rows.map(|r| r.start)));
        layers.push(LayerTransfers { layer: lp.index, kind: lp.kind, to_fc: i + 1 == plan.layers.len(), transfers });
    }
    Ok(TransferPlan { initial, layers })
}

/// Transfer sizes evaluated term by term from the closed-form expressions
/// for the three-band layout (`e1` above, host band, `e2` below):
///
/// * image slice to `ek`: `4·(IE¹ − IS¹ + 1)·I¹·c_in¹`
/// * host → `e1` before layer `i+1`: `4·(IE_{i+1}^{e1} − OS_i^{e0} + 1)·I_{i+1}·c_in_{i+1}`
/// * host → `e2` before layer `i+1`: `4·(IS_{i+1}^{e2} − OE_i^{e0} + 1)·I_{i+1}·c_in_{i+1}`
/// * `e1` → host after layer `i`: `4·(IS_{i+1}^{e0} − OE_i^{e1} + 1)·I_i·c_in_i`
/// * `e2` → host after layer `i`: `4·(IS_i^{e2} − OE_{i+1}^{e0} + 1)·I_i·c_in_i`
/// * after the last layer: `4·(OE − OS + 1)·O·c_out` per secondary
///
/// `IS`/`IE` are the unwidened receptive-field intervals. Some operand
/// orders go negative for some splits; that is reported as
/// [`PartitionError::NegativeSize`] rather than clamped.
pub fn transfer_sizes_literal(plan: &PartitionPlan, network: &NetworkSpec) -> Result<TransferPlan, PartitionError> {
    let specs = network.spatial_layers();
    let (e0, e1, e2) = (ServerId::Host, ServerId::Secondary(1), ServerId::Secondary(2));
    for lp in &plan.layers {
        if lp.slices.len() != 3 || [e1, e0, e2].iter().any(|&s| lp.slice(s).is_none()) {
            return Err(PartitionError::NotThreeBand);
        }
    }
    let bounds = |i: usize, server: ServerId| {
        let lp = &plan.layers[i];
        let out = lp.out_rows(server);
        let (start, end) = formula_bounds(&lp.rf, out.start, out.end);
        (start.max(1), end.min(lp.dims.input as i64))
    };
    let os = |i: usize, s: ServerId| plan.layers[i].out_rows(s).start as i64;
    let oe = |i: usize, s: ServerId| plan.layers[i].out_rows(s).end as i64;
    let sized = |layer: usize, from: ServerId, to: ServerId, rows: i64, width: usize, channels: usize| {
        if rows < 0 {
            Err(PartitionError::NegativeSize { layer, link: format!("{from}->{to}"), rows })
        } else {
            Ok(Transfer { from, to, rows: None, row_count: rows, bytes: rows * row_bytes(width, channels) })
        }
    };

    let first = &plan.layers[0];
    let mut initial = Vec::new();
    for server in [e1, e2] {
        let (is, ie) = bounds(0, server);
        initial.push(sized(0, e0, server, ie - is + 1, first.dims.input, network.input_channels)?);
    }

    let n = plan.layers.len();
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let lp = &plan.layers[i];
        let spec = &specs[lp.index];
        let mut transfers = Vec::new();
        if i + 1 < n {
            let next = &plan.layers[i + 1];
            let (in_w, in_c) = (lp.dims.input, spec.c_in);
            let (next_w, next_c) = (next.dims.input, specs[next.index].c_in);
            let to_e1 = bounds(i + 1, e1).1 - os(i, e0) + 1;
            let to_e2 = bounds(i + 1, e2).0 - oe(i, e0) + 1;
            let from_e1 = bounds(i + 1, e0).0 - oe(i, e1) + 1;
            let from_e2 = bounds(i, e2).0 - oe(i + 1, e0) + 1;
            transfers.push(sized(lp.index, e0, e1, to_e1, next_w, next_c)?);
            transfers.push(sized(lp.index, e0, e2, to_e2, next_w, next_c)?);
            transfers.push(sized(lp.index, e1, e0, from_e1, in_w, in_c)?);
            transfers.push(sized(lp.index, e2, e0, from_e2, in_w, in_c)?);
        } else {
            for server in [e1, e2] {
                let rows = oe(i, server) - os(i, server) + 1;
                transfers.push(sized(lp.index, server, e0, rows, lp.dims.output, spec.c_out)?);
            }
        }
        layers.push(LayerTransfers { layer: lp.index, kind: lp.kind, to_fc: i + 1 == n, transfers });
    }
    Ok(TransferPlan { initial, layers })
}

/// A link whose row count differs between two transfer plans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferDiscrepancy {
    /// `None` for the initial image distribution.
    pub layer: Option<usize>,
    pub from: ServerId,
    pub to: ServerId,
    pub literal_rows: i64,
    pub oracle_rows: i64,
}

impl TransferDiscrepancy {
    pub fn row_gap(&self) -> i64 {
        (self.literal_rows - self.oracle_rows).abs()
    }
}

/// Row-count differences per link between the literal and dependency-based
/// plans. Every difference is logged at debug level.
pub fn compare_transfers(literal: &TransferPlan, oracle: &TransferPlan) -> Vec<TransferDiscrepancy> {
    let mut links: Vec<(Option<usize>, ServerId, ServerId)> = Vec::new();
    let mut note = |layer, t: &Transfer| {
        if !links.contains(&(layer, t.from, t.to)) {
            links.push((layer, t.from, t.to));
        }
    };
    for t in literal.initial.iter().chain(&oracle.initial) {
        note(None, t);
    }
    for lt in literal.layers.iter().chain(&oracle.layers) {
        for t in &lt.transfers {
            note(Some(lt.layer), t);
        }
    }
    let count = |plan: &TransferPlan, layer: Option<usize>, from: ServerId, to: ServerId| -> i64 {
        match layer {
            None => plan.initial.iter().filter(|t| t.from == from && t.to == to).map(|t| t.row_count).sum(),
            Some(l) => plan
                .layers
                .iter()
                .filter(|lt| lt.layer == l)
                .flat_map(|lt| &lt.transfers)
                .filter(|t| t.from == from && t.to == to)
                .map(|t| t.row_count)
                .sum(),
        }
    };
    links
        .into_iter()
        .filter_map(|(layer, from, to)| {
            let d = TransferDiscrepancy {
                layer,
                from,
                to,
                literal_rows: count(literal, layer, from, to),
                oracle_rows: count(oracle, layer, from, to),
            };
            (d.literal_rows != d.oracle_rows).then(|| {
                log::debug!(
                    "transfer mismatch layer {:?} {}->{}: literal {} rows, dependency {} rows",
                    d.layer,
                    d.from,
                    d.to,
                    d.literal_rows,
                    d.oracle_rows
                );
                d
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::LayerSpec;
    use crate::partition::{plan_partition, SplitRatios};

    const E0: ServerId = ServerId::Host;
    const E1: ServerId = ServerId::Secondary(1);
    const E2: ServerId = ServerId::Secondary(2);

    fn vgg_balanced() -> (NetworkSpec, PartitionPlan) {
        let vgg = NetworkSpec::vgg16();
        let plan = plan_partition(&vgg, &SplitRatios::balanced(&vgg).unwrap()).unwrap();
        (vgg, plan)
    }

    #[test]
    fn initial_slice_of_half_split() {
        let vgg = NetworkSpec::vgg16();
        let plan = plan_partition(&vgg, &SplitRatios::uniform(&vgg, [0.5, 0.0, 0.5]).unwrap()).unwrap();
        let e1 = plan.layers[0].slice(E1).unwrap();
        assert_eq!(e1.formula_rows, Some(RowRange::new(1, 113)));
        let literal = transfer_sizes_literal(&plan, &vgg).unwrap();
        assert_eq!(literal.initial_bytes(E1), 303_744);
    }

    #[test]
    fn last_layer_sends_full_sub_outputs() {
        let (vgg, plan) = vgg_balanced();
        let oracle = transfer_sizes_oracle(&plan, &vgg).unwrap();
        let last = plan.layers.len() - 1;
        let lp = &plan.layers[last];
        for server in [E1, E2] {
            let h = lp.out_rows(server).len() as i64;
            assert_eq!(oracle.bytes(last, server, E0), 4 * h * 7 * 512);
        }
        let literal = transfer_sizes_literal(&plan, &vgg).unwrap();
        assert_eq!(literal.bytes(last, E1, E0), oracle.bytes(last, E1, E0));
    }

    #[test]
    fn standalone_needs_no_exchange() {
        let vgg = NetworkSpec::vgg16();
        let plan = plan_partition(&vgg, &SplitRatios::standalone(&vgg)).unwrap();
        let oracle = transfer_sizes_oracle(&plan, &vgg).unwrap();
        for (i, lt) in oracle.layers.iter().enumerate() {
            if !lt.to_fc {
                assert!(lt.transfers.is_empty(), "layer {i}: {:?}", lt.transfers);
            }
        }
        // the closed forms still charge boundary rows when e2 and the host hold nothing
        let literal = transfer_sizes_literal(&plan, &vgg).unwrap();
        let gaps = compare_transfers(&literal, &oracle);
        assert!(gaps.iter().any(|g| g.layer == Some(0) && g.from == E2 && g.to == E0));
    }

    #[test]
    fn balanced_vgg_first_exchange_is_four_rows() {
        let (vgg, plan) = vgg_balanced();
        let oracle = transfer_sizes_oracle(&plan, &vgg).unwrap();
        assert_eq!(oracle.rows_between(0, E1, E0), vec![111]);
        assert_eq!(oracle.rows_between(0, E2, E0), vec![114]);
        assert_eq!(oracle.rows_between(0, E0, E1), vec![112]);
        assert_eq!(oracle.rows_between(0, E0, E2), vec![113]);
        let total: i64 = oracle.layers[0].transfers.iter().map(|t| t.row_count).sum();
        assert_eq!(total, 4);
        // host input band for the first layer is four image rows
        assert_eq!(plan.layers[0].slice(E0).unwrap().needed_rows, Some(RowRange::new(111, 114)));
    }

    #[test]
    fn no_host_to_secondary_transfer_before_a_pool() {
        let (vgg, plan) = vgg_balanced();
        let oracle = transfer_sizes_oracle(&plan, &vgg).unwrap();
        for (i, lp) in plan.layers.iter().enumerate().take(plan.layers.len() - 1) {
            if plan.layers[i + 1].kind == LayerKind::Maxpool {
                assert_eq!(oracle.bytes(i, E0, E1), 0, "before pool {}", lp.index + 1);
                assert_eq!(oracle.bytes(i, E0, E2), 0, "before pool {}", lp.index + 1);
            }
        }
        assert!(oracle.bytes(1, E1, E0) > 0);
    }

    #[test]
    fn pointwise_network_exchanges_nothing_between_layers() {
        let net = NetworkSpec::new(
            "pw",
            16,
            2,
            vec![LayerSpec::conv(1, 1, 0, 2, 4), LayerSpec::conv(1, 1, 0, 4, 4), LayerSpec::conv(1, 1, 0, 4, 3)],
        )
        .unwrap();
        let plan = plan_partition(&net, &SplitRatios::uniform(&net, [0.5, 0.0, 0.5]).unwrap()).unwrap();
        let oracle = transfer_sizes_oracle(&plan, &net).unwrap();
        for lt in oracle.layers.iter().filter(|l| !l.to_fc) {
            assert!(lt.transfers.iter().all(|t| t.bytes == 0), "{:?}", lt.transfers);
        }
    }

    #[test]
    fn literal_matches_oracle_on_3x3_stacks() {
        let net = NetworkSpec::new(
            "c3",
            32,
            4,
            vec![LayerSpec::conv(3, 1, 1, 4, 4), LayerSpec::conv(3, 1, 1, 4, 4), LayerSpec::conv(3, 1, 1, 4, 4)],
        )
        .unwrap();
        let plan = plan_partition(&net, &SplitRatios::balanced(&net).unwrap()).unwrap();
        let oracle = transfer_sizes_oracle(&plan, &net).unwrap();
        let literal = transfer_sizes_literal(&plan, &net).unwrap();
        let gaps = compare_transfers(&literal, &oracle);
        assert!(gaps.iter().all(|g| g.row_gap() <= 1), "{gaps:?}");
    }

    #[test]
    fn literal_reports_negative_sizes() {
        // The host band grows on the second layer, past the rows e2 reads
        // on the first, so the e2 -> host operand goes negative.
        let net = NetworkSpec::new("n", 16, 1, vec![LayerSpec::conv(3, 1, 1, 1, 1), LayerSpec::conv(3, 1, 1, 1, 1)])
            .unwrap();
        let bands = [
            vec![(E1, RowRange::new(1, 4)), (E0, RowRange::new(5, 12)), (E2, RowRange::new(13, 16))],
            vec![(E1, RowRange::new(1, 2)), (E0, RowRange::new(3, 15)), (E2, RowRange::new(16, 16))],
        ];
        let plan = crate::partition::plan_bands(&net, &bands).unwrap();
        assert!(matches!(
            transfer_sizes_literal(&plan, &net),
            Err(PartitionError::NegativeSize { layer: 0, .. })
        ));
        transfer_sizes_oracle(&plan, &net).unwrap();
    }
}
