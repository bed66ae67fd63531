//! A deliberately plain tensor engine: direct convolution, max-pooling and
//! dense layers over HWC `f32` tensors, used to check that row-partitioned
//! execution reproduces monolithic execution bit for bit.
//!
//! Every output entry is accumulated in one fixed order — kernel row, kernel
//! column, input channel — with padding positions skipped, so the same entry
//! computed on different servers yields the same bits.

mod exec;
mod kernel;
mod verify;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netspec::NetSpecError;
use crate::partition::{PartitionError, ServerId};

pub use exec::{forward_layers, run_full, run_partitioned, run_partitioned_with, FullOutput};
pub use kernel::{conv_forward, dense_forward, maxpool_forward};
pub use verify::{apply_mutation, check_equivalence, check_mutation, mutations, Equivalence, Mutation, MutationOutcome};
pub use weights::{ConvWeights, DenseWeights, WeightSet};

#[derive(Error, Debug)]
pub enum TensorError {
    #[error("shape mismatch at layer {layer}: {reason}")]
    Shape { layer: usize, reason: String },
    #[error("layer {layer}: {server} needs input row {row} but does not hold it")]
    MissingRows { layer: usize, server: ServerId, row: usize },
    #[error("weight file: {0}")]
    WeightFile(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    NetSpec(#[from] NetSpecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a server does when a row its window needs was never delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MissingRowPolicy {
    /// Fail with [`TensorError::MissingRows`].
    #[default]
    Error,
    /// Read the row as zeros, the way an unchecked implementation would.
    ZeroFill,
}

/// A `(height, width, channels)` tensor stored row-major with channels
/// innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if data.len() != height * width * channels {
            return Err(TensorError::Shape {
                layer: 0,
                reason: format!("{} values for a {height}x{width}x{channels} tensor", data.len()),
            });
        }
        Ok(Self { height, width, channels, data })
    }

    /// Entries drawn uniformly from `[0, 1)` with a seeded ChaCha8 stream.
    pub fn random(height: usize, width: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..height * width * channels).map(|_| rng.random::<f32>()).collect();
        Self { height, width, channels, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size on the wire as float32.
    pub fn byte_size(&self) -> usize {
        4 * self.data.len()
    }

    fn row_len(&self) -> usize {
        self.width * self.channels
    }

    /// Row `row`, 1-based like every row index in the crate.
    pub fn row(&self, row: usize) -> &[f32] {
        let n = self.row_len();
        &self.data[(row - 1) * n..row * n]
    }

    /// Entry at zero-based `(y, x, c)`.
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Largest absolute entry-wise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor3) -> Option<f32> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return None;
        }
        Some(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max))
    }

    /// Exact equality including the sign of zero and NaN payloads.
    pub fn bitwise_eq(&self, other: &Tensor3) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_size_is_four_per_entry() {
        let t = Tensor3::zeros(224, 224, 3);
        assert_eq!(t.byte_size(), 4 * 224 * 224 * 3);
        assert!(Tensor3::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn rows_are_one_based() {
        let t = Tensor3::from_vec(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.row(2), &[3.0, 4.0]);
        assert_eq!(t.get(1, 0, 1), 4.0);
    }

    #[test]
    fn random_is_seeded() {
        assert!(Tensor3::random(4, 4, 2, 7).bitwise_eq(&Tensor3::random(4, 4, 2, 7)));
        assert!(!Tensor3::random(4, 4, 2, 7).bitwise_eq(&Tensor3::random(4, 4, 2, 8)));
    }
}
