use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::{PartitionError, ServerId, Split, SplitRatios};
use crate::netspec::{LayerDims, LayerKind, LayerSpec, NetworkSpec, RfState};
use crate::rows::RowRange;

/// One server's share of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerSlice {
    pub server: ServerId,
    /// Output rows this server computes (may be empty).
    pub out_rows: RowRange,
    /// Input rows the server assembles before computing: the receptive-field
    /// formula, widened where the formula alone would miss a dependency.
    pub in_rows: Option<RowRange>,
    /// The receptive-field formula's interval, as computed.
    pub formula_rows: Option<RowRange>,
    /// Exact input rows read by `out_rows`.
    pub needed_rows: Option<RowRange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub index: usize,
    pub kind: LayerKind,
    pub dims: LayerDims,
    /// Receptive-field state of this layer on its own input.
    pub rf: RfState,
    /// Slices in vertical order.
    pub slices: Vec<ServerSlice>,
}

impl LayerPlan {
    pub fn slice(&self, server: ServerId) -> Option<&ServerSlice> {
        self.slices.iter().find(|s| s.server == server)
    }

    pub fn slice_mut(&mut self, server: ServerId) -> Option<&mut ServerSlice> {
        self.slices.iter_mut().find(|s| s.server == server)
    }

    /// The server computing output row `row`.
    pub fn owner_of(&self, row: usize) -> Option<ServerId> {
        self.slices.iter().find(|s| s.out_rows.contains(row)).map(|s| s.server)
    }

    pub fn out_rows(&self, server: ServerId) -> RowRange {
        self.slice(server).map(|s| s.out_rows).unwrap_or(RowRange::empty_at(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub network: String,
    pub layers: Vec<LayerPlan>,
}

impl PartitionPlan {
    /// Servers in the order the first layer lists them.
    pub fn servers(&self) -> Vec<ServerId> {
        self.layers.first().map(|l| l.slices.iter().map(|s| s.server).collect()).unwrap_or_default()
    }

    pub fn secondaries(&self) -> Vec<ServerId> {
        let mut ids: Vec<ServerId> = self.servers().into_iter().filter(|s| !s.is_host()).collect();
        ids.sort();
        ids
    }

    /// Checks every output row's clipped window against its server's
    /// `in_rows`, row by row.
    pub fn verify_coverage(&self, network: &NetworkSpec) -> Result<(), PartitionError> {
        let layers = network.spatial_layers();
        for lp in &self.layers {
            let spec = &layers[lp.index];
            for slice in &lp.slices {
                for o in slice.out_rows.iter() {
                    let window = spec.clipped_window(o, lp.dims.input);
                    let covered = slice.in_rows.is_some_and(|r| r.contains_range(&window));
                    if !covered {
                        let row = window
                            .iter()
                            .find(|&row| !slice.in_rows.is_some_and(|r| r.contains(row)))
                            .unwrap_or(window.start);
                        return Err(PartitionError::MissingRows { layer: lp.index, server: slice.server, row });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Output bands `[e1, e0, e2]` for an output of `rows` rows.
pub fn split_output(rows: usize, split: &Split) -> Result<[RowRange; 3], PartitionError> {
    split_output_at(rows, split, 0)
}

fn split_output_at(rows: usize, split: &Split, layer: usize) -> Result<[RowRange; 3], PartitionError> {
    let [a, b, _] = split.rows(rows, layer)?;
    Ok([band(1, a), band(a + 1, b), band(a + b + 1, rows - a - b)])
}

fn band(start: usize, len: usize) -> RowRange {
    if len == 0 {
        RowRange::empty_at(start)
    } else {
        RowRange::new(start, start + len - 1)
    }
}

/// Raw receptive-field interval for output rows `[os, oe]`, unclamped; `os`
/// and `oe` need not describe a non-empty band.
pub(crate) fn formula_bounds(rf: &RfState, os: usize, oe: usize) -> (i64, i64) {
    let half = (rf.field - 1) / 2;
    let at = |row: i64| (rf.center + Rational64::from_integer(row * rf.jump - half)).floor().to_integer();
    (at(os as i64 - 1), at(oe as i64 + 1))
}

/// Input rows `(IS, IE)` for output rows `out_rows`, from a receptive-field
/// state whose rows are measured in an input of height `in_dim`.
///
/// `IS = max(σ + (OS−1)·j − ⌊(r−1)/2⌋, 1)` and
/// `IE = min(σ + (OE+1)·j − ⌊(r−1)/2⌋, I)`, floored when `σ` is
/// half-integral. The `OE + 1` term makes the interval a superset of the
/// exact dependency for kernels up to `2j + 1`.
pub fn input_range(rf: &RfState, out_rows: &RowRange, in_dim: usize) -> Option<RowRange> {
    if out_rows.is_empty() {
        return None;
    }
    let (start, end) = formula_bounds(rf, out_rows.start, out_rows.end);
    let start = start.clamp(1, in_dim as i64) as usize;
    let end = end.clamp(1, in_dim as i64) as usize;
    Some(RowRange::new(start, end.max(start)))
}

/// Builds the three-band plan from per-layer split ratios.
pub fn plan_partition(network: &NetworkSpec, ratios: &SplitRatios) -> Result<PartitionPlan, PartitionError> {
    ratios.check_layers(network)?;
    let dims = network.spatial_dims()?;
    let order = [ServerId::Secondary(1), ServerId::Host, ServerId::Secondary(2)];
    let bands = ratios
        .layers
        .iter()
        .zip(&dims)
        .enumerate()
        .map(|(i, (split, d))| {
            let ranges = split_output_at(d.output, split, i)?;
            Ok(order.iter().copied().zip(ranges).collect())
        })
        .collect::<Result<Vec<Vec<_>>, PartitionError>>()?;
    plan_bands(network, &bands)
}

/// Builds a plan from explicit bands, given per layer in vertical order.
/// The bands must tile each layer's output rows.
pub fn plan_bands(
    network: &NetworkSpec,
    bands: &[Vec<(ServerId, RowRange)>],
) -> Result<PartitionPlan, PartitionError> {
    let dims = network.spatial_dims()?;
    if bands.len() != dims.len() {
        return Err(PartitionError::LayerCount { expected: dims.len(), found: bands.len() });
    }
    let layers = network
        .spatial_layers()
        .iter()
        .zip(&dims)
        .zip(bands)
        .enumerate()
        .map(|(index, ((spec, d), layer_bands))| {
            check_tiling(index, d.output, layer_bands)?;
            let rf = RfState::local(spec);
            let slices = layer_bands
                .iter()
                .map(|&(server, out_rows)| slice_for(spec, &rf, *d, server, out_rows))
                .collect();
            Ok(LayerPlan { index, kind: spec.kind, dims: *d, rf, slices })
        })
        .collect::<Result<Vec<_>, PartitionError>>()?;
    Ok(PartitionPlan { network: network.name.clone(), layers })
}

fn check_tiling(layer: usize, rows: usize, bands: &[(ServerId, RowRange)]) -> Result<(), PartitionError> {
    let mut next = 1;
    for (_, r) in bands {
        if r.start != next {
            return Err(PartitionError::BadTiling { layer, rows });
        }
        next = r.end + 1;
    }
    if next != rows + 1 {
        return Err(PartitionError::BadTiling { layer, rows });
    }
    Ok(())
}

fn slice_for(spec: &LayerSpec, rf: &RfState, dims: LayerDims, server: ServerId, out_rows: RowRange) -> ServerSlice {
    let formula_rows = input_range(rf, &out_rows, dims.input);
    let needed_rows = spec.dependency(&out_rows, dims.input);
    let in_rows = match (formula_rows, needed_rows) {
        (Some(f), Some(n)) => Some(f.hull(&n)),
        _ => None,
    };
    ServerSlice { server, out_rows, in_rows, formula_rows, needed_rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{rf_oracle_at, LayerSpec};

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn split_output_examples() {
        let [e1, e0, e2] = split_output(224, &Split::new(r(1, 2), r(0, 1), r(1, 2))).unwrap();
        assert_eq!((e1, e2), (RowRange::new(1, 112), RowRange::new(113, 224)));
        assert!(e0.is_empty());

        let [e1, e0, e2] = split_output(224, &Split::new(r(111, 224), r(2, 224), r(111, 224))).unwrap();
        assert_eq!([e1, e0, e2], [RowRange::new(1, 111), RowRange::new(112, 113), RowRange::new(114, 224)]);

        let [e1, e0, e2] = split_output(10, &Split::standalone()).unwrap();
        assert_eq!(e1, RowRange::new(1, 10));
        assert!(e0.is_empty() && e2.is_empty());

        assert!(split_output(10, &Split::new(r(1, 3), r(1, 3), r(1, 3))).is_err());
    }

    #[test]
    fn input_range_examples() {
        let vgg_g1 = RfState::local(&LayerSpec::conv(3, 1, 1, 3, 64));
        assert_eq!((vgg_g1.jump, vgg_g1.field, vgg_g1.center), (1, 3, r(1, 1)));
        assert_eq!(input_range(&vgg_g1, &RowRange::new(1, 112), 224), Some(RowRange::new(1, 113)));
        assert_eq!(input_range(&vgg_g1, &RowRange::new(113, 224), 224), Some(RowRange::new(112, 224)));

        // 1x1 kernel: σ + (OE+1)·j = 1 + 10 = 11, two rows past the exact end.
        let pointwise = RfState::local(&LayerSpec::conv(1, 1, 0, 1, 1));
        assert_eq!(input_range(&pointwise, &RowRange::new(5, 9), 20), Some(RowRange::new(5, 11)));

        assert_eq!(input_range(&vgg_g1, &RowRange::empty_at(5), 224), None);
    }

    #[test]
    fn pooling_start_is_floored_exactly() {
        let pool = RfState::local(&LayerSpec::maxpool(2, 2, 0, 1));
        assert_eq!(pool.center, r(3, 2));
        // rows [3, 4] read input [5, 8]; 1.5 + 2·2 = 5.5 floors to 5
        assert_eq!(input_range(&pool, &RowRange::new(3, 4), 16).unwrap().start, 5);
    }

    #[test]
    fn wide_kernels_get_widened_to_cover() {
        let net = NetworkSpec::new("k5", 12, 1, vec![LayerSpec::conv(5, 1, 2, 1, 1)]).unwrap();
        let ratios = SplitRatios::uniform(&net, [0.5, 0.0, 0.5]).unwrap();
        let plan = plan_partition(&net, &ratios).unwrap();
        let e1 = plan.layers[0].slice(ServerId::Secondary(1)).unwrap();
        assert_eq!(e1.out_rows, RowRange::new(1, 6));
        assert_eq!(e1.formula_rows, Some(RowRange::new(1, 6)));
        assert_eq!(e1.needed_rows, Some(RowRange::new(1, 8)));
        assert_eq!(e1.in_rows, Some(RowRange::new(1, 8)));
        plan.verify_coverage(&net).unwrap();
    }

    #[test]
    fn standalone_plan_degenerates() {
        let vgg = NetworkSpec::vgg16();
        let plan = plan_partition(&vgg, &SplitRatios::standalone(&vgg)).unwrap();
        for lp in &plan.layers {
            let e1 = lp.slice(ServerId::Secondary(1)).unwrap();
            assert_eq!(e1.out_rows, RowRange::new(1, lp.dims.output));
            assert_eq!(e1.needed_rows, Some(RowRange::new(1, lp.dims.input)));
            assert!(lp.out_rows(ServerId::Host).is_empty());
            assert!(lp.out_rows(ServerId::Secondary(2)).is_empty());
        }
    }

    #[test]
    fn needed_rows_match_brute_force_on_toy_net() {
        let net = NetworkSpec::new(
            "toy",
            8,
            2,
            vec![LayerSpec::conv(3, 1, 1, 2, 3), LayerSpec::maxpool(2, 2, 0, 3), LayerSpec::conv(3, 1, 0, 3, 2)],
        )
        .unwrap();
        let plan = plan_partition(&net, &SplitRatios::balanced(&net).unwrap()).unwrap();
        plan.verify_coverage(&net).unwrap();
        for lp in &plan.layers {
            let single = NetworkSpec::new(
                "one",
                lp.dims.input,
                net.spatial_layers()[lp.index].c_in,
                vec![net.spatial_layers()[lp.index].clone()],
            )
            .unwrap();
            for s in &lp.slices {
                let mut lo = usize::MAX;
                let mut hi = 0;
                for o in s.out_rows.iter() {
                    let t = rf_oracle_at(&single, 0, o).unwrap();
                    lo = lo.min(t.rows.start);
                    hi = hi.max(t.rows.end);
                }
                let brute = (hi > 0).then(|| RowRange::new(lo, hi));
                assert_eq!(s.needed_rows, brute, "layer {} server {}", lp.index, s.server);
            }
        }
    }

    #[test]
    fn bad_tiling_is_rejected() {
        let net = NetworkSpec::new("t", 8, 1, vec![LayerSpec::conv(3, 1, 1, 1, 1)]).unwrap();
        let gap = vec![vec![(ServerId::Secondary(1), RowRange::new(1, 3)), (ServerId::Host, RowRange::new(5, 8))]];
        assert!(matches!(plan_bands(&net, &gap), Err(PartitionError::BadTiling { .. })));
    }
}
