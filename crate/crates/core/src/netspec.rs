//! Network geometry: per-layer shapes, output-size arithmetic and the
//! cumulative receptive-field chain.
//!
//! Rows and columns are 1-based everywhere. A spatial layer with kernel `k`,
//! stride `s` and padding `p` maps input height `I` to
//! `floor((I + 2p - k) / s) + 1`, and output row `o` reads the input rows
//! `[s(o-1) + 1 - p, s(o-1) + k - p]` (rows outside `[1, I]` are padding).

use std::fmt;
use std::path::Path;

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rows::RowRange;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum NetSpecError {
    #[error("layer {layer}: fully connected layers have no spatial geometry")]
    NotSpatial { layer: usize },
    #[error("layer {layer}: kernel {k} exceeds padded input {padded}")]
    KernelTooLarge { layer: usize, k: usize, padded: usize },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("channel mismatch at layer {layer}: expected {expected} input channels, found {found}")]
    ChannelMismatch { layer: usize, expected: usize, found: usize },
    #[error("layer {layer}: fully connected layers must follow all spatial layers")]
    FcBeforeSpatial { layer: usize },
    #[error("network has no spatial layers")]
    NoSpatialLayers,
    #[error("input height must be positive")]
    EmptyInput,
    #[error("output row {row} outside [1, {height}]")]
    RowOutOfRange { row: usize, height: usize },
    #[error("layer index {index} out of range ({count} spatial layers)")]
    LayerOutOfRange { index: usize, count: usize },
    #[error("failed to read network spec: {0}")]
    Io(String),
    #[error("failed to parse network spec: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Maxpool,
    Fc,
}

impl LayerKind {
    pub fn is_spatial(self) -> bool {
        !matches!(self, LayerKind::Fc)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv => "conv",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Fc => "fc",
        })
    }
}

/// One layer of the network. For `fc` layers `k`, `s` and `p` are zero and
/// `c_in` is the flattened feature count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub s: usize,
    #[serde(default)]
    pub p: usize,
    pub c_in: usize,
    pub c_out: usize,
    #[serde(default)]
    pub relu: bool,
}

impl LayerSpec {
    pub fn conv(k: usize, s: usize, p: usize, c_in: usize, c_out: usize) -> Self {
        Self { kind: LayerKind::Conv, k, s, p, c_in, c_out, relu: true }
    }

    pub fn maxpool(k: usize, s: usize, p: usize, channels: usize) -> Self {
        Self { kind: LayerKind::Maxpool, k, s, p, c_in: channels, c_out: channels, relu: false }
    }

    pub fn fc(c_in: usize, c_out: usize, relu: bool) -> Self {
        Self { kind: LayerKind::Fc, k: 0, s: 0, p: 0, c_in, c_out, relu }
    }

    pub fn without_relu(mut self) -> Self {
        self.relu = false;
        self
    }

    pub fn is_spatial(&self) -> bool {
        self.kind.is_spatial()
    }

    fn validate(&self, index: usize) -> Result<(), NetSpecError> {
        let bad = |reason: &str| NetSpecError::InvalidLayer { layer: index, reason: reason.into() };
        if self.c_in == 0 || self.c_out == 0 {
            return Err(bad("channel counts must be positive"));
        }
        match self.kind {
            LayerKind::Fc => {
                if self.k != 0 || self.s != 0 || self.p != 0 {
                    return Err(bad("fc layers take no kernel, stride or padding"));
                }
            }
            LayerKind::Conv | LayerKind::Maxpool => {
                if self.k == 0 || self.s == 0 {
                    return Err(bad("kernel and stride must be positive"));
                }
                if self.p >= self.k {
                    return Err(bad("padding must be smaller than the kernel"));
                }
                if self.kind == LayerKind::Maxpool && self.c_in != self.c_out {
                    return Err(bad("maxpool must preserve the channel count"));
                }
            }
        }
        Ok(())
    }

    /// Unclipped input rows read by output row `out_row` (1-based).
    pub fn window(&self, out_row: usize) -> (i64, i64) {
        let base = (self.s * (out_row - 1)) as i64 - self.p as i64;
        (base + 1, base + self.k as i64)
    }

    /// Input rows read by `out_row`, clipped to `[1, in_dim]`.
    pub fn clipped_window(&self, out_row: usize, in_dim: usize) -> RowRange {
        let (lo, hi) = self.window(out_row);
        RowRange::new(lo.max(1) as usize, hi.min(in_dim as i64) as usize)
    }

    /// Input rows read by a band of output rows, clipped. `None` for an empty band.
    pub fn dependency(&self, out_rows: &RowRange, in_dim: usize) -> Option<RowRange> {
        (!out_rows.is_empty()).then(|| {
            self.clipped_window(out_rows.start, in_dim)
                .hull(&self.clipped_window(out_rows.end, in_dim))
        })
    }
}

/// Output height of a spatial layer.
pub fn output_dim(input_dim: usize, layer: &LayerSpec) -> Result<usize, NetSpecError> {
    output_dim_at(input_dim, layer, 0)
}

fn output_dim_at(input_dim: usize, layer: &LayerSpec, index: usize) -> Result<usize, NetSpecError> {
    if !layer.is_spatial() {
        return Err(NetSpecError::NotSpatial { layer: index });
    }
    if input_dim == 0 {
        return Err(NetSpecError::EmptyInput);
    }
    if layer.s == 0 {
        return Err(NetSpecError::InvalidLayer { layer: index, reason: "stride must be positive".into() });
    }
    let padded = input_dim + 2 * layer.p;
    if layer.k > padded {
        return Err(NetSpecError::KernelTooLarge { layer: index, k: layer.k, padded });
    }
    Ok((padded - layer.k) / layer.s + 1)
}

/// Heights of one spatial layer's input and output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_height: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Builds and validates a network.
    pub fn new(
        name: impl Into<String>,
        input_height: usize,
        input_channels: usize,
        layers: Vec<LayerSpec>,
    ) -> Result<Self, NetSpecError> {
        let net = Self { name: name.into(), input_height, input_channels, layers };
        net.validate()?;
        Ok(net)
    }

    /// The built-in VGG-16 fixture: thirteen 3x3 convolutions, five 2x2
    /// max-pools and three fully connected layers on a 224x224x3 image.
    pub fn vgg16() -> Self {
        let mut layers = Vec::with_capacity(21);
        let mut c_in = 3;
        for &(convs, width) in &[(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)] {
            for _ in 0..convs {
                layers.push(LayerSpec::conv(3, 1, 1, c_in, width));
                c_in = width;
            }
            layers.push(LayerSpec::maxpool(2, 2, 0, width));
        }
        layers.push(LayerSpec::fc(7 * 7 * 512, 4096, true));
        layers.push(LayerSpec::fc(4096, 4096, true));
        layers.push(LayerSpec::fc(4096, 1000, false));
        Self { name: "vgg16".into(), input_height: 224, input_channels: 3, layers }
    }

    pub fn from_json(text: &str) -> Result<Self, NetSpecError> {
        let net: NetworkSpec =
            serde_json::from_str(text).map_err(|e| NetSpecError::Parse(e.to_string()))?;
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetSpecError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| NetSpecError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network spec serializes")
    }

    pub fn validate(&self) -> Result<(), NetSpecError> {
        if self.input_height == 0 || self.input_channels == 0 {
            return Err(NetSpecError::EmptyInput);
        }
        let mut seen_fc = false;
        let mut height = self.input_height;
        let mut channels = self.input_channels;
        let mut features = None;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
            if layer.is_spatial() {
                if seen_fc {
                    return Err(NetSpecError::FcBeforeSpatial { layer: i });
                }
                if layer.c_in != channels {
                    return Err(NetSpecError::ChannelMismatch { layer: i, expected: channels, found: layer.c_in });
                }
                height = output_dim_at(height, layer, i)?;
                channels = layer.c_out;
            } else {
                let expected = *features.get_or_insert(height * height * channels);
                if layer.c_in != expected {
                    return Err(NetSpecError::ChannelMismatch { layer: i, expected, found: layer.c_in });
                }
                seen_fc = true;
                features = Some(layer.c_out);
            }
        }
        if self.num_spatial() == 0 {
            return Err(NetSpecError::NoSpatialLayers);
        }
        Ok(())
    }

    pub fn num_spatial(&self) -> usize {
        self.layers.iter().take_while(|l| l.is_spatial()).count()
    }

    /// Conv and pool layers, in order.
    pub fn spatial_layers(&self) -> &[LayerSpec] {
        &self.layers[..self.num_spatial()]
    }

    pub fn fc_layers(&self) -> &[LayerSpec] {
        &self.layers[self.num_spatial()..]
    }

    /// Input/output height of every spatial layer.
    pub fn spatial_dims(&self) -> Result<Vec<LayerDims>, NetSpecError> {
        let mut height = self.input_height;
        self.spatial_layers()
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let output = output_dim_at(height, layer, i)?;
                let dims = LayerDims { input: height, output };
                height = output;
                Ok(dims)
            })
            .collect()
    }
}

/// Cumulative receptive-field state of a layer's output, measured in rows of
/// the raw input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfState {
    /// Input rows advanced per output row.
    pub jump: i64,
    /// Receptive-field size in input rows.
    pub field: i64,
    /// Input row of the centre of the first output row's field; half-integral
    /// after even kernels.
    pub center: Rational64,
}

impl RfState {
    /// The raw input: every pixel sees itself.
    pub fn input() -> Self {
        Self { jump: 1, field: 1, center: Rational64::from_integer(1) }
    }

    /// The state after applying `layer` on top of `self`.
    pub fn step(&self, layer: &LayerSpec) -> Self {
        let k = layer.k as i64;
        let offset = Rational64::new(k - 1, 2) - Rational64::from_integer(layer.p as i64);
        Self {
            jump: self.jump * layer.s as i64,
            field: self.field + (k - 1) * self.jump,
            center: self.center + offset * self.jump,
        }
    }

    /// The state of a single layer applied directly to its own input, i.e.
    /// rows measured in that layer's input tensor.
    pub fn local(layer: &LayerSpec) -> Self {
        Self::input().step(layer)
    }

    /// Centre row of the field of output row `out_row`.
    pub fn center_of(&self, out_row: usize) -> Rational64 {
        self.center + Rational64::from_integer((out_row as i64 - 1) * self.jump)
    }
}

/// Receptive-field state after every spatial layer.
pub fn propagate_rf(network: &NetworkSpec) -> Result<Vec<RfState>, NetSpecError> {
    network.validate()?;
    let mut state = RfState::input();
    Ok(network
        .spatial_layers()
        .iter()
        .map(|layer| {
            state = state.step(layer);
            state
        })
        .collect())
}

/// A small random network for property checks: a square input of 6–32
/// rows, 2–6 spatial layers mixing convolutions (kernels 1–5, strides 1–2)
/// and max-pools, and every other network a single fc layer on top.
/// The same seed always gives the same network.
pub fn toy_network(seed: u64) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_height = rng.random_range(6..=32);
    let input_channels = rng.random_range(1..=3);
    let depth = rng.random_range(2..=6);
    let mut layers = Vec::with_capacity(depth + 1);
    let (mut height, mut channels) = (input_height, input_channels);
    for i in 0..depth {
        let pool = i > 0 && rng.random_bool(0.3);
        let k = if pool { rng.random_range(2..=3) } else { [1, 2, 3, 3, 5][rng.random_range(0..5)] };
        let s = rng.random_range(1..=2);
        let p = rng.random_range(0..=k / 2);
        let mut layer = if pool {
            LayerSpec::maxpool(k, s, p, channels)
        } else {
            LayerSpec::conv(k, s, p, channels, rng.random_range(1..=4))
        };
        // keep at least two output rows so every layer has something to split
        match output_dim(height, &layer) {
            Ok(h) if h >= 2 => {}
            _ => layer = LayerSpec::conv(1, 1, 0, channels, layer.c_out),
        }
        height = output_dim(height, &layer).expect("1x1 convolution always fits");
        channels = layer.c_out;
        layers.push(layer);
    }
    if seed % 2 == 1 {
        layers.push(LayerSpec::fc(height * height * channels, rng.random_range(2..=8), false));
    }
    NetworkSpec::new(format!("toy-{seed}"), input_height, input_channels, layers).expect("generated network is valid")
}

/// Result of tracing one output row back to the input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfTrace {
    /// First and last input row that influences the traced output row.
    pub rows: RowRange,
    /// Whether any layer's window hit padding along the way.
    pub clipped: bool,
}

/// Brute-force dependency trace: marks every row each layer reads, walking
/// back from `out_row` of the final spatial layer to the input image.
pub fn rf_oracle(network: &NetworkSpec, out_row: usize) -> Result<RfTrace, NetSpecError> {
    let n = network.num_spatial();
    if n == 0 {
        return Err(NetSpecError::NoSpatialLayers);
    }
    rf_oracle_at(network, n - 1, out_row)
}

/// Like [`rf_oracle`] but starting from the output of spatial layer `layer`
/// (0-based).
pub fn rf_oracle_at(network: &NetworkSpec, layer: usize, out_row: usize) -> Result<RfTrace, NetSpecError> {
    let dims = network.spatial_dims()?;
    let layers = network.spatial_layers();
    if layer >= layers.len() {
        return Err(NetSpecError::LayerOutOfRange { index: layer, count: layers.len() });
    }
    let height = dims[layer].output;
    if out_row == 0 || out_row > height {
        return Err(NetSpecError::RowOutOfRange { row: out_row, height });
    }
    let mut marked = vec![false; height + 1];
    marked[out_row] = true;
    let mut clipped = false;
    for i in (0..=layer).rev() {
        let spec = &layers[i];
        let in_dim = dims[i].input;
        let mut below = vec![false; in_dim + 1];
        for o in (1..marked.len()).filter(|&o| marked[o]) {
            let (lo, hi) = spec.window(o);
            for r in lo..=hi {
                if r < 1 || r > in_dim as i64 {
                    clipped = true;
                } else {
                    below[r as usize] = true;
                }
            }
        }
        marked = below;
    }
    let first = marked.iter().position(|&m| m).expect("every window touches the input");
    let last = marked.iter().rposition(|&m| m).expect("non-empty");
    Ok(RfTrace { rows: RowRange::new(first, last), clipped })
}
