//! Probability of meeting a batch deadline when the offloading time from
//! the IoT device to the host is Gaussian.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ReliabilityError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("need at least one sample")]
    NoSamples,
}

/// Offloading channel: a payload of `payload_bits` sent at mean rate `rate`
/// with offloading-time standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadModel {
    /// Bits per second.
    pub rate: f64,
    pub payload_bits: f64,
    /// Seconds.
    pub sigma: f64,
}

impl OffloadModel {
    pub fn new(rate: f64, payload_bits: f64, sigma: f64) -> Result<Self, ReliabilityError> {
        if !(rate > 0.0) {
            return Err(ReliabilityError::NonPositive("rate"));
        }
        if !(payload_bits > 0.0) {
            return Err(ReliabilityError::NonPositive("payload"));
        }
        if !(sigma >= 0.0) {
            return Err(ReliabilityError::Negative("sigma"));
        }
        Ok(Self { rate, payload_bits, sigma })
    }

    /// Mean offloading time `S / R`.
    pub fn mean(&self) -> f64 {
        self.payload_bits / self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadlineSpec {
    /// Seconds per batch.
    pub deadline: f64,
    /// Inference time of the batch, seconds.
    pub t_inf: f64,
}

impl DeadlineSpec {
    pub fn new(deadline: f64, t_inf: f64) -> Result<Self, ReliabilityError> {
        if !(deadline > 0.0) {
            return Err(ReliabilityError::NonPositive("deadline"));
        }
        if !(t_inf >= 0.0) {
            return Err(ReliabilityError::Negative("inference time"));
        }
        Ok(Self { deadline, t_inf })
    }
}

/// Lowest offloading rate sustaining `target_fps` frames of `image_bytes`
/// each. Batching tasks changes when bits are sent, not how many per second.
pub fn min_offload_rate(_n_tasks: usize, image_bytes: f64, target_fps: f64) -> f64 {
    target_fps * image_bytes * 8.0
}

/// Rate drop `φ` whose transfer time equals the mean plus three standard
/// deviations: `φ = R − S / (μ + 3σ)`.
pub fn rate_fluctuation(model: &OffloadModel) -> f64 {
    model.rate - model.payload_bits / (model.mean() + 3.0 * model.sigma)
}

/// Time left for offloading beyond its mean: `D − T_inf − μ`.
pub fn slack(model: &OffloadModel, spec: &DeadlineSpec) -> f64 {
    spec.deadline - spec.t_inf - model.mean()
}

fn std_normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("standard normal")
}

/// `P(T_off + T_inf ≤ D) = Φ(slack / σ)`; a step function when `σ = 0`.
pub fn reliability_closed_form(model: &OffloadModel, spec: &DeadlineSpec) -> f64 {
    let s = slack(model, spec);
    if model.sigma == 0.0 {
        return if s >= 0.0 { 1.0 } else { 0.0 };
    }
    std_normal().cdf(s / model.sigma)
}

/// Slack implied by reliability `p` at standard deviation `sigma`:
/// `Φ⁻¹(p)·σ`. `None` when `p` is 0 or 1, which pins no finite slack.
pub fn implied_slack(p: f64, sigma: f64) -> Option<f64> {
    (p > 0.0 && p < 1.0).then(|| std_normal().inverse_cdf(p) * sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub probability: f64,
    pub successes: u64,
    pub samples: u64,
    /// Standard error of the estimate, `sqrt(p(1−p)/n)`.
    pub std_error: f64,
    /// 95% Wilson score interval.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Draws below zero, counted as zero offloading time.
    pub clamped: u64,
}

const CHUNK: u64 = 1 << 16;

/// Samples offloading times and counts deadline hits. Samples are drawn in
/// fixed-size chunks, chunk `c` from its own ChaCha8 stream `c` under
/// `seed`, so the result depends only on `seed` and `n_samples`, never on
/// `workers`.
pub fn reliability_monte_carlo(
    model: &OffloadModel,
    spec: &DeadlineSpec,
    n_samples: u64,
    seed: u64,
    workers: usize,
) -> Result<MonteCarloEstimate, ReliabilityError> {
    if n_samples == 0 {
        return Err(ReliabilityError::NoSamples);
    }
    let mu = model.mean();
    let budget = spec.deadline - spec.t_inf;
    let chunks = n_samples.div_ceil(CHUNK);
    let workers = workers.clamp(1, chunks as usize);

    let run_chunk = |c: u64| -> (u64, u64) {
        let len = CHUNK.min(n_samples - c * CHUNK);
        if model.sigma == 0.0 {
            return (if mu.max(0.0) <= budget { len } else { 0 }, u64::from(mu < 0.0) * len);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c);
        let normal = Normal::new(mu, model.sigma).expect("finite parameters");
        let (mut hits, mut clamped) = (0, 0);
        for _ in 0..len {
            let mut t = normal.sample(&mut rng);
            if t < 0.0 {
                t = 0.0;
                clamped += 1;
            }
            if t <= budget {
                hits += 1;
            }
        }
        (hits, clamped)
    };

    let (successes, clamped) = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run_chunk = &run_chunk;
                scope.spawn(move || {
                    (w as u64..chunks).step_by(workers).map(run_chunk).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampling worker panicked"))
            .fold((0u64, 0u64), |a, b| (a.0 + b.0, a.1 + b.1))
    });
    if clamped > 0 {
        log::info!("{clamped} of {n_samples} offloading-time draws were negative and clamped to zero");
    }

    let n = n_samples as f64;
    let p = successes as f64 / n;
    let z = 1.959_963_984_540_054;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    Ok(MonteCarloEstimate {
        probability: p,
        successes,
        samples: n_samples,
        std_error: (p * (1.0 - p) / n).sqrt(),
        ci_low: (centre - half).max(0.0),
        ci_high: (centre + half).min(1.0),
        clamped,
    })
}

/// A reliability table: columns of (rate, σ), one row per scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub deadline_ms: f64,
    pub payload_bits: f64,
    pub columns: Vec<ReliabilityColumn>,
    pub schemes: Vec<SchemeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityColumn {
    pub rate_mbps: f64,
    pub sigma_ms: f64,
    /// Printed rate fluctuation for the column, if any.
    #[serde(default)]
    pub reference_phi_mbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub scheme: String,
    pub t_inf_ms: f64,
    /// Printed reliabilities, one per column, if any.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
}

/// One evaluated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCell {
    pub scheme: String,
    pub rate_mbps: f64,
    pub sigma_ms: f64,
    pub phi_mbps: f64,
    pub closed_form: f64,
    pub reference: Option<f64>,
}

impl ReliabilityCell {
    pub fn delta(&self) -> Option<f64> {
        self.reference.map(|r| (self.closed_form - r).abs())
    }
}

impl ReliabilityTable {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn model(&self, column: &ReliabilityColumn) -> Result<OffloadModel, ReliabilityError> {
        OffloadModel::new(column.rate_mbps * 1e6, self.payload_bits, column.sigma_ms * 1e-3)
    }

    pub fn spec(&self, row: &SchemeRow) -> Result<DeadlineSpec, ReliabilityError> {
        DeadlineSpec::new(self.deadline_ms * 1e-3, row.t_inf_ms * 1e-3)
    }

    /// Closed-form value of every cell, scheme by scheme.
    pub fn evaluate(&self) -> Result<Vec<ReliabilityCell>, ReliabilityError> {
        let mut cells = Vec::new();
        for row in &self.schemes {
            let spec = self.spec(row)?;
            for (c, column) in self.columns.iter().enumerate() {
                let model = self.model(column)?;
                cells.push(ReliabilityCell {
                    scheme: row.scheme.clone(),
                    rate_mbps: column.rate_mbps,
                    sigma_ms: column.sigma_ms,
                    phi_mbps: rate_fluctuation(&model) / 1e6,
                    closed_form: reliability_closed_form(&model, &spec),
                    reference: row.reference.as_ref().and_then(|r| r.get(c).copied()),
                });
            }
        }
        Ok(cells)
    }
}
