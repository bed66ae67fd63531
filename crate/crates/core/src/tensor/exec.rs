use std::collections::{BTreeMap, HashMap};

use super::kernel::layer_rows;
use super::{dense_forward, MissingRowPolicy, Tensor3, TensorError, WeightSet};
use crate::netspec::NetworkSpec;
use crate::partition::{transfer_sizes_oracle, PartitionError, PartitionPlan, ServerId, TransferPlan};
use crate::rows::RowRange;

/// Result of a monolithic forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FullOutput {
    /// Output of the last spatial layer.
    pub features: Tensor3,
    /// Fc outputs, when the weight set carries fc layers.
    pub scores: Option<Vec<f32>>,
}

fn check_image(network: &NetworkSpec, image: &Tensor3) -> Result<(), TensorError> {
    let expected = (network.input_height, network.input_height, network.input_channels);
    if (image.height, image.width, image.channels) != expected {
        return Err(TensorError::Shape {
            layer: 0,
            reason: format!(
                "image is {}x{}x{}, network takes {}x{}x{}",
                image.height, image.width, image.channels, expected.0, expected.1, expected.2
            ),
        });
    }
    Ok(())
}

/// Output of every spatial layer, in order.
pub fn forward_layers(network: &NetworkSpec, weights: &WeightSet, image: &Tensor3) -> Result<Vec<Tensor3>, TensorError> {
    weights.check(network)?;
    check_image(network, image)?;
    let mut outputs: Vec<Tensor3> = Vec::with_capacity(network.num_spatial());
    for (i, (layer, dims)) in network.spatial_layers().iter().zip(network.spatial_dims()?).enumerate() {
        let input = outputs.last().unwrap_or(image);
        let data = layer_rows(
            layer,
            weights.conv[i].as_ref(),
            (input.height, input.width),
            RowRange::new(1, dims.output),
            |r| Some(input.row(r)),
            MissingRowPolicy::Error,
        )
        .expect("a whole tensor holds every row");
        outputs.push(Tensor3::from_vec(dims.output, dims.output, layer.c_out, data)?);
    }
    Ok(outputs)
}

/// Monolithic forward pass; fc layers flatten the last feature map in HWC order.
pub fn run_full(network: &NetworkSpec, weights: &WeightSet, image: &Tensor3) -> Result<FullOutput, TensorError> {
    let features = forward_layers(network, weights, image)?.pop().expect("at least one spatial layer");
    let scores = if weights.has_dense() && !network.fc_layers().is_empty() {
        let mut x = features.data.clone();
        for (layer, w) in network.fc_layers().iter().zip(&weights.dense) {
            x = dense_forward(&x, layer, w)?;
        }
        Some(x)
    } else {
        None
    };
    Ok(FullOutput { features, scores })
}

/// Partitioned execution with exchanges from the dependency-based transfer
/// plan, failing on any row a server lacks.
pub fn run_partitioned(
    network: &NetworkSpec,
    weights: &WeightSet,
    image: &Tensor3,
    plan: &PartitionPlan,
) -> Result<Tensor3, TensorError> {
    let transfers = transfer_sizes_oracle(plan, network)?;
    run_partitioned_with(network, weights, image, plan, &transfers, MissingRowPolicy::Error)
}

type Store = HashMap<usize, Vec<f32>>;

/// Simulates every server separately. A server starts each layer with the
/// rows it computed itself plus the rows `transfers` delivered, and may
/// read only those that also fall inside its slice's `in_rows`. After the
/// last spatial layer the host assembles the output from its own rows and
/// what the secondaries sent.
pub fn run_partitioned_with(
    network: &NetworkSpec,
    weights: &WeightSet,
    image: &Tensor3,
    plan: &PartitionPlan,
    transfers: &TransferPlan,
    policy: MissingRowPolicy,
) -> Result<Tensor3, TensorError> {
    weights.check(network)?;
    check_image(network, image)?;
    let specs = network.spatial_layers();
    let dims = network.spatial_dims()?;
    if plan.layers.len() != specs.len() {
        return Err(PartitionError::LayerCount { expected: specs.len(), found: plan.layers.len() }.into());
    }
    if transfers.layers.len() != plan.layers.len() {
        return Err(PartitionError::LayerCount { expected: plan.layers.len(), found: transfers.layers.len() }.into());
    }

    let mut stores: BTreeMap<ServerId, Store> = plan.servers().into_iter().map(|s| (s, Store::new())).collect();
    stores.insert(ServerId::Host, (1..=image.height).map(|r| (r, image.row(r).to_vec())).collect());
    for t in &transfers.initial {
        let rows = t.rows.ok_or_else(|| shape(0, "transfer plan has no row ranges"))?;
        let store = stores.entry(t.to).or_default();
        for r in rows.iter() {
            store.insert(r, image.row(r).to_vec());
        }
    }

    for (i, lp) in plan.layers.iter().enumerate() {
        if lp.index != i || lp.dims != dims[i] {
            return Err(shape(i, "plan does not match the network"));
        }
        let spec = &specs[i];
        let row_len = dims[i].output * spec.c_out;
        let mut computed: BTreeMap<ServerId, Store> = BTreeMap::new();
        for slice in &lp.slices {
            let own = computed.entry(slice.server).or_default();
            if slice.out_rows.is_empty() {
                continue;
            }
            let store = &stores[&slice.server];
            let readable = slice.in_rows;
            let fetch = |r: usize| readable.filter(|x| x.contains(r)).and_then(|_| store.get(&r)).map(Vec::as_slice);
            let data = layer_rows(spec, weights.conv[i].as_ref(), (dims[i].input, dims[i].input), slice.out_rows, fetch, policy)
                .map_err(|row| TensorError::MissingRows { layer: i, server: slice.server, row })?;
            for (r, chunk) in slice.out_rows.iter().zip(data.chunks_exact(row_len)) {
                own.insert(r, chunk.to_vec());
            }
        }

        let mut next = computed.clone();
        for t in &transfers.layers[i].transfers {
            let rows = t.rows.ok_or_else(|| shape(i, "transfer plan has no row ranges"))?;
            for r in rows.iter() {
                let row = computed
                    .get(&t.from)
                    .and_then(|s| s.get(&r))
                    .ok_or(TensorError::MissingRows { layer: i, server: t.from, row: r })?;
                next.entry(t.to).or_default().insert(r, row.clone());
            }
        }
        stores = next;
    }

    let last = dims.len() - 1;
    let out_dim = dims[last].output;
    let host = &stores[&ServerId::Host];
    let mut data = Vec::with_capacity(out_dim * out_dim * specs[last].c_out);
    for r in 1..=out_dim {
        let row = host.get(&r).ok_or(TensorError::MissingRows { layer: last, server: ServerId::Host, row: r })?;
        data.extend_from_slice(row);
    }
    Tensor3::from_vec(out_dim, out_dim, specs[last].c_out, data)
}

fn shape(layer: usize, reason: &str) -> TensorError {
    TensorError::Shape { layer, reason: reason.into() }
}
