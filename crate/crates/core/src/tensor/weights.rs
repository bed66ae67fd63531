use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TensorError;
use crate::netspec::{LayerKind, LayerSpec, NetworkSpec};

/// Kernel laid out `[kh][kw][c_in][c_out]`, plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvWeights {
    pub(crate) fn check(&self, layer: &LayerSpec, index: usize) -> Result<(), TensorError> {
        let expected = layer.k * layer.k * layer.c_in * layer.c_out;
        if self.kernel.len() != expected || self.bias.len() != layer.c_out {
            return Err(TensorError::Shape {
                layer: index,
                reason: format!(
                    "conv weights hold {}+{} values, layer needs {expected}+{}",
                    self.kernel.len(),
                    self.bias.len(),
                    layer.c_out
                ),
            });
        }
        Ok(())
    }
}

/// Matrix laid out `[c_in][c_out]`, plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    pub matrix: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseWeights {
    pub(crate) fn check(&self, layer: &LayerSpec, index: usize) -> Result<(), TensorError> {
        if self.matrix.len() != layer.c_in * layer.c_out || self.bias.len() != layer.c_out {
            return Err(TensorError::Shape {
                layer: index,
                reason: format!("dense weights do not match a {}x{} layer", layer.c_in, layer.c_out),
            });
        }
        Ok(())
    }
}

/// Parameters for one network. `conv` has an entry per spatial layer
/// (`None` for pools); `dense` is either empty or one entry per fc layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub conv: Vec<Option<ConvWeights>>,
    pub dense: Vec<DenseWeights>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    network: String,
    dtype: String,
    layers: Vec<SidecarLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarLayer {
    kind: LayerKind,
    shape: Vec<usize>,
    bias: usize,
}

impl WeightSet {
    /// He-uniform weights (`±sqrt(6 / fan_in)`) and biases in `±0.05`, drawn
    /// layer by layer from one ChaCha8 stream seeded with `seed`.
    pub fn seeded(network: &NetworkSpec, seed: u64) -> Self {
        Self::generate(network, seed, true)
    }

    /// Like [`WeightSet::seeded`] but without the fc layers, whose matrices
    /// dominate the parameter count and are irrelevant to partitioning.
    pub fn seeded_features(network: &NetworkSpec, seed: u64) -> Self {
        Self::generate(network, seed, false)
    }

    fn generate(network: &NetworkSpec, seed: u64, dense: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, bound: f32| -> Vec<f32> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let conv = network
            .spatial_layers()
            .iter()
            .map(|l| {
                (l.kind == LayerKind::Conv).then(|| {
                    let fan_in = l.k * l.k * l.c_in;
                    ConvWeights {
                        kernel: draw(fan_in * l.c_out, (6.0 / fan_in as f32).sqrt()),
                        bias: draw(l.c_out, 0.05),
                    }
                })
            })
            .collect();
        let dense = if dense {
            network
                .fc_layers()
                .iter()
                .map(|l| DenseWeights {
                    matrix: draw(l.c_in * l.c_out, (6.0 / l.c_in as f32).sqrt()),
                    bias: draw(l.c_out, 0.05),
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { conv, dense }
    }

    /// All-zero weights and biases.
    pub fn zeros(network: &NetworkSpec) -> Self {
        let conv = network
            .spatial_layers()
            .iter()
            .map(|l| {
                (l.kind == LayerKind::Conv).then(|| ConvWeights {
                    kernel: vec![0.0; l.k * l.k * l.c_in * l.c_out],
                    bias: vec![0.0; l.c_out],
                })
            })
            .collect();
        let dense = network
            .fc_layers()
            .iter()
            .map(|l| DenseWeights { matrix: vec![0.0; l.c_in * l.c_out], bias: vec![0.0; l.c_out] })
            .collect();
        Self { conv, dense }
    }

    pub fn has_dense(&self) -> bool {
        !self.dense.is_empty()
    }

    pub fn check(&self, network: &NetworkSpec) -> Result<(), TensorError> {
        let spatial = network.spatial_layers();
        if self.conv.len() != spatial.len() {
            return Err(TensorError::Shape {
                layer: 0,
                reason: format!("{} spatial weight entries for {} spatial layers", self.conv.len(), spatial.len()),
            });
        }
        for (i, (layer, w)) in spatial.iter().zip(&self.conv).enumerate() {
            match (layer.kind, w) {
                (LayerKind::Conv, Some(w)) => w.check(layer, i)?,
                (LayerKind::Maxpool, None) => {}
                _ => return Err(TensorError::Shape { layer: i, reason: "weights do not match layer kind".into() }),
            }
        }
        let fc = network.fc_layers();
        if self.has_dense() {
            if self.dense.len() != fc.len() {
                return Err(TensorError::Shape {
                    layer: spatial.len(),
                    reason: format!("{} dense entries for {} fc layers", self.dense.len(), fc.len()),
                });
            }
            for (i, (layer, w)) in fc.iter().zip(&self.dense).enumerate() {
                w.check(layer, spatial.len() + i)?;
            }
        }
        Ok(())
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes the parameters as little-endian float32 (per layer: weights,
    /// then bias) to `path` and a JSON shape description next to it.
    pub fn save(&self, network: &NetworkSpec, path: impl AsRef<Path>) -> Result<(), TensorError> {
        self.check(network)?;
        let path = path.as_ref();
        let mut bytes = Vec::new();
        let mut layers = Vec::new();
        let mut put = |values: &[f32]| bytes.extend(values.iter().flat_map(|v| v.to_le_bytes()));
        for (layer, w) in network.spatial_layers().iter().zip(&self.conv) {
            if let Some(w) = w {
                put(&w.kernel);
                put(&w.bias);
                layers.push(SidecarLayer {
                    kind: layer.kind,
                    shape: vec![layer.k, layer.k, layer.c_in, layer.c_out],
                    bias: layer.c_out,
                });
            }
        }
        for (layer, w) in network.fc_layers().iter().zip(&self.dense) {
            put(&w.matrix);
            put(&w.bias);
            layers.push(SidecarLayer { kind: layer.kind, shape: vec![layer.c_in, layer.c_out], bias: layer.c_out });
        }
        let sidecar = Sidecar { network: network.name.clone(), dtype: "float32-le".into(), layers };
        fs::write(path, bytes)?;
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| TensorError::WeightFile(e.to_string()))?;
        fs::write(Self::sidecar_path(path), json)?;
        Ok(())
    }

    /// Reads a file written by [`WeightSet::save`], checking every shape in
    /// the sidecar against `network`.
    pub fn load(network: &NetworkSpec, path: impl AsRef<Path>) -> Result<Self, TensorError> {
        let path = path.as_ref();
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(Self::sidecar_path(path))?)
            .map_err(|e| TensorError::WeightFile(e.to_string()))?;
        let bytes = fs::read(path)?;
        if bytes.len() % 4 != 0 {
            return Err(TensorError::WeightFile(format!("{} bytes is not a whole number of floats", bytes.len())));
        }
        let values: Vec<f32> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect();
        let mut cursor = 0;
        let mut take = |n: usize| -> Result<Vec<f32>, TensorError> {
            let chunk = values
                .get(cursor..cursor + n)
                .ok_or_else(|| TensorError::WeightFile("file shorter than its sidecar".into()))?;
            cursor += n;
            Ok(chunk.to_vec())
        };

        let mut described = sidecar.layers.iter();
        let mut expect = |layer: &LayerSpec, shape: Vec<usize>| -> Result<(), TensorError> {
            match described.next() {
                Some(d) if d.kind == layer.kind && d.shape == shape && d.bias == layer.c_out => Ok(()),
                Some(d) => Err(TensorError::WeightFile(format!(
                    "sidecar describes {} {:?}, network needs {} {shape:?}",
                    d.kind, d.shape, layer.kind
                ))),
                None => Err(TensorError::WeightFile("sidecar lists too few layers".into())),
            }
        };

        let mut conv = Vec::new();
        for layer in network.spatial_layers() {
            if layer.kind == LayerKind::Conv {
                expect(layer, vec![layer.k, layer.k, layer.c_in, layer.c_out])?;
                let kernel = take(layer.k * layer.k * layer.c_in * layer.c_out)?;
                conv.push(Some(ConvWeights { kernel, bias: take(layer.c_out)? }));
            } else {
                conv.push(None);
            }
        }
        let has_dense = sidecar.layers.len() > conv.iter().flatten().count();
        let mut dense = Vec::new();
        if has_dense {
            for layer in network.fc_layers() {
                expect(layer, vec![layer.c_in, layer.c_out])?;
                let matrix = take(layer.c_in * layer.c_out)?;
                dense.push(DenseWeights { matrix, bias: take(layer.c_out)? });
            }
        }
        if cursor != values.len() {
            return Err(TensorError::WeightFile(format!("{} trailing floats", values.len() - cursor)));
        }
        let set = Self { conv, dense };
        set.check(network)?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NetworkSpec {
        NetworkSpec::new(
            "toy",
            8,
            2,
            vec![
                LayerSpec::conv(3, 1, 1, 2, 3),
                LayerSpec::maxpool(2, 2, 0, 3),
                LayerSpec::fc(4 * 4 * 3, 5, false),
            ],
        )
        .unwrap()
    }

    #[test]
    fn seeded_weights_are_reproducible_and_bounded() {
        let net = toy();
        let a = WeightSet::seeded(&net, 11);
        assert_eq!(a, WeightSet::seeded(&net, 11));
        assert_ne!(a, WeightSet::seeded(&net, 12));
        let bound = (6.0f32 / 18.0).sqrt();
        assert!(a.conv[0].as_ref().unwrap().kernel.iter().all(|w| w.abs() <= bound));
        a.check(&net).unwrap();
        assert!(!WeightSet::seeded_features(&net, 11).has_dense());
    }

    #[test]
    fn weight_file_round_trip() {
        let net = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        for set in [WeightSet::seeded(&net, 5), WeightSet::seeded_features(&net, 5)] {
            set.save(&net, &path).unwrap();
            assert_eq!(WeightSet::load(&net, &path).unwrap(), set);
        }
        let other = NetworkSpec::new("other", 8, 2, vec![LayerSpec::conv(1, 1, 0, 2, 3)]).unwrap();
        assert!(WeightSet::load(&other, &path).is_err());
    }
}
