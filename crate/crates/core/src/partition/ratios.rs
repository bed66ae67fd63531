use num_rational::Rational64;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::{PartitionError, ServerId};
use crate::netspec::{LayerKind, NetworkSpec};

/// Output-row shares of one layer, listed in vertical order: `e1` takes the
/// top band, the host `e0` the middle (overlapping) band, `e2` the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub e1: Rational64,
    pub e0: Rational64,
    pub e2: Rational64,
}

impl Split {
    pub fn new(e1: Rational64, e0: Rational64, e2: Rational64) -> Self {
        Self { e1, e0, e2 }
    }

    /// Exact shares from whole row counts.
    pub fn from_rows(e1: usize, e0: usize, e2: usize) -> Self {
        let total = (e1 + e0 + e2) as i64;
        let r = |n: usize| Rational64::new(n as i64, total);
        Self::new(r(e1), r(e0), r(e2))
    }

    pub fn standalone() -> Self {
        Self::new(Rational64::one(), Rational64::zero(), Rational64::zero())
    }

    pub fn validate(&self, layer: usize) -> Result<(), PartitionError> {
        for (server, value) in self.servers() {
            if value < Rational64::zero() || value > Rational64::one() {
                return Err(PartitionError::RatioRange { layer, server, value: value.to_string() });
            }
        }
        let sum = self.e1 + self.e0 + self.e2;
        if sum != Rational64::one() {
            return Err(PartitionError::RatioSum { layer, sum: sum.to_string() });
        }
        Ok(())
    }

    fn servers(&self) -> [(ServerId, Rational64); 3] {
        [(ServerId::Secondary(1), self.e1), (ServerId::Host, self.e0), (ServerId::Secondary(2), self.e2)]
    }

    /// Row counts `[e1, e0, e2]` for an output of `rows` rows. Every share
    /// must land on a whole row.
    pub fn rows(&self, rows: usize, layer: usize) -> Result<[usize; 3], PartitionError> {
        self.validate(layer)?;
        let mut counts = [0usize; 3];
        for (slot, (server, share)) in counts.iter_mut().zip(self.servers()) {
            let exact = share * Rational64::from_integer(rows as i64);
            if !exact.is_integer() {
                return Err(PartitionError::NonIntegralSplit { layer, server, rows });
            }
            *slot = exact.to_integer() as usize;
        }
        Ok(counts)
    }
}

/// Per-spatial-layer splits for a whole network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub layers: Vec<Split>,
}

impl SplitRatios {
    /// Every layer on `e1` alone.
    pub fn standalone(network: &NetworkSpec) -> Self {
        Self { layers: vec![Split::standalone(); network.num_spatial()] }
    }

    /// The same fractional split on every layer, rounded to whole rows. Both
    /// band boundaries round half up, so ties go to the band nearer `e1`.
    pub fn uniform(network: &NetworkSpec, fractions: [f64; 3]) -> Result<Self, PartitionError> {
        let names = [ServerId::Secondary(1), ServerId::Host, ServerId::Secondary(2)];
        for (server, &f) in names.iter().zip(&fractions) {
            if !(0.0..=1.0).contains(&f) {
                return Err(PartitionError::RatioRange { layer: 0, server: *server, value: f.to_string() });
            }
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PartitionError::RatioSum { layer: 0, sum: format!("{sum}") });
        }
        let layers = network
            .spatial_dims()?
            .iter()
            .map(|d| {
                let o = d.output as f64;
                let first = ((fractions[0] * o + 0.5).floor() as usize).min(d.output);
                let second = (((fractions[0] + fractions[1]) * o + 0.5).floor() as usize).clamp(first, d.output);
                Split::from_rows(first, second - first, d.output - second)
            })
            .collect();
        Ok(Self { layers })
    }

    /// Equal halves to the two secondaries; the host takes the minimal band
    /// of output rows whose windows straddle the cut between them.
    ///
    /// The first layer cuts the image in half. A convolution re-cuts in the
    /// middle of the previous host band, so the host keeps a band of about
    /// the kernel's halo and trades boundary rows with both secondaries. A
    /// pooling layer instead gives the host every output row that reads any
    /// host-held row, so no secondary needs host data to pool.
    pub fn balanced(network: &NetworkSpec) -> Result<Self, PartitionError> {
        let dims = network.spatial_dims()?;
        let mut held: Option<(usize, usize)> = None;
        let mut layers = Vec::with_capacity(dims.len());
        for (layer, d) in network.spatial_layers().iter().zip(&dims) {
            let (lo_cut, hi_cut) = match held {
                None => (d.input / 2, d.input / 2),
                Some((e1_last, host)) if layer.kind == LayerKind::Maxpool => (e1_last, e1_last + host),
                Some((e1_last, host)) => {
                    let cut = e1_last + host.div_ceil(2);
                    (cut, cut)
                }
            };
            let windows = (1..=d.output).map(|o| layer.clipped_window(o, d.input));
            let e1 = windows.clone().take_while(|w| w.end <= lo_cut).count();
            let e2 = windows.rev().take_while(|w| w.start > hi_cut).count();
            let host = d.output - e1 - e2;
            layers.push(Split::from_rows(e1, host, e2));
            held = Some((e1, host));
        }
        Ok(Self { layers })
    }

    pub fn check_layers(&self, network: &NetworkSpec) -> Result<(), PartitionError> {
        let expected = network.num_spatial();
        if self.layers.len() != expected {
            return Err(PartitionError::LayerCount { expected, found: self.layers.len() });
        }
        Ok(())
    }
}
