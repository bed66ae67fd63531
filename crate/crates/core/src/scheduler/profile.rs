use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SchedError;
use crate::netspec::{LayerKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    /// Operation counts divided by calibrated effective throughput.
    #[default]
    Analytic,
    /// Measured whole-layer times scaled by the share of rows computed.
    Table,
}

/// Compute characteristics of one (homogeneous) edge server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    /// Peak float32 operations per second.
    pub flops: f64,
    /// Time of the fully connected tail, seconds.
    pub t_fls: f64,
    /// Standalone whole-network inference time, seconds.
    pub t_pre: f64,
    #[serde(default)]
    pub mode: TimingMode,
    /// Fraction of peak achieved on conv/pool layers; set by [`DeviceProfile::calibrate`].
    #[serde(default)]
    pub utilization: Option<f64>,
    /// Whole-layer times per spatial layer, seconds (table mode).
    #[serde(default)]
    pub layer_times: Option<Vec<f64>>,
}

impl DeviceProfile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchedError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SchedError::Config(format!("{}: {e}", path.display())))?;
        let profile: Self = serde_json::from_str(&text).map_err(|e| SchedError::Config(format!("{}: {e}", path.display())))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        let bad = |what: &str| Err(SchedError::InvalidProfile { profile: self.name.clone(), reason: what.into() });
        if !(self.flops > 0.0) {
            return bad("flops must be positive");
        }
        if !(self.t_pre > 0.0) {
            return bad("t_pre must be positive");
        }
        if !(self.t_fls >= 0.0) || self.t_fls >= self.t_pre {
            return bad("t_fls must be non-negative and below t_pre");
        }
        if let Some(u) = self.utilization {
            if !(u > 0.0) {
                return bad("utilization must be positive");
            }
        }
        if self.mode == TimingMode::Table && self.layer_times.is_none() {
            return bad("table mode needs layer_times");
        }
        Ok(())
    }

    /// Sets the utilization so the standalone run of `network` — every
    /// spatial layer on all rows, then the fc tail — takes exactly `t_pre`.
    pub fn calibrate(mut self, network: &NetworkSpec) -> Result<Self, SchedError> {
        self.validate()?;
        let ops: f64 = (0..network.num_spatial())
            .map(|i| layer_ops(network, i, usize::MAX))
            .collect::<Result<Vec<_>, _>>()?
            .iter()
            .sum();
        self.utilization = Some(ops / (self.flops * (self.t_pre - self.t_fls)));
        Ok(self)
    }

    pub fn is_calibrated(&self) -> bool {
        match self.mode {
            TimingMode::Analytic => self.utilization.is_some(),
            TimingMode::Table => self.layer_times.is_some(),
        }
    }
}

/// Floating-point operations (two per multiply-accumulate) for `rows`
/// output rows of spatial layer `layer`; `rows` is capped at the layer's height.
pub fn layer_ops(network: &NetworkSpec, layer: usize, rows: usize) -> Result<f64, SchedError> {
    let specs = network.spatial_layers();
    let spec = specs.get(layer).ok_or(SchedError::Inconsistent(format!("no spatial layer {layer}")))?;
    let dims = network.spatial_dims()?[layer];
    let rows = rows.min(dims.output) as f64;
    let o = dims.output as f64;
    let k2 = (spec.k * spec.k) as f64;
    let macs = match spec.kind {
        LayerKind::Conv => rows * o * spec.c_out as f64 * k2 * spec.c_in as f64,
        // one comparison per window element
        LayerKind::Maxpool => rows * o * spec.c_out as f64 * k2,
        LayerKind::Fc => 0.0,
    };
    Ok(2.0 * macs)
}

/// Time for one server to compute `rows` output rows of spatial layer `layer`.
pub fn compute_time(network: &NetworkSpec, layer: usize, rows: usize, profile: &DeviceProfile) -> Result<f64, SchedError> {
    if rows == 0 {
        return Ok(0.0);
    }
    match profile.mode {
        TimingMode::Analytic => {
            let u = profile.utilization.ok_or_else(|| SchedError::Uncalibrated(profile.name.clone()))?;
            Ok(layer_ops(network, layer, rows)? / (profile.flops * u))
        }
        TimingMode::Table => {
            let table = profile.layer_times.as_ref().ok_or_else(|| SchedError::Uncalibrated(profile.name.clone()))?;
            if table.len() != network.num_spatial() {
                return Err(SchedError::TableCoverage { expected: network.num_spatial(), found: table.len() });
            }
            let out = network.spatial_dims()?[layer].output;
            Ok(table[layer] * rows.min(out) as f64 / out as f64)
        }
    }
}

/// A server-to-server link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    /// Bits per second.
    pub rate: f64,
    /// Fixed cost per non-empty message, seconds.
    #[serde(default)]
    pub overhead: f64,
}

impl LinkProfile {
    pub fn new(rate: f64) -> Result<Self, SchedError> {
        Self::with_overhead(rate, 0.0)
    }

    pub fn with_overhead(rate: f64, overhead: f64) -> Result<Self, SchedError> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(SchedError::Config(format!("link rate must be positive, got {rate}")));
        }
        if !(overhead >= 0.0) {
            return Err(SchedError::Config(format!("link overhead must be non-negative, got {overhead}")));
        }
        Ok(Self { rate, overhead })
    }

    pub fn gbps(rate: f64) -> Result<Self, SchedError> {
        Self::new(rate * 1e9)
    }

    /// Time to send `bytes`; an empty message costs nothing.
    pub fn send_time(&self, bytes: i64) -> f64 {
        if bytes <= 0 {
            0.0
        } else {
            bytes as f64 * 8.0 / self.rate + self.overhead
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn gtx() -> DeviceProfile {
        DeviceProfile {
            name: "gtx".into(),
            flops: 11.3e12,
            t_fls: 0.0011354,
            t_pre: 0.0047,
            mode: TimingMode::Analytic,
            utilization: None,
            layer_times: None,
        }
    }

    #[test]
    fn calibration_reproduces_t_pre() {
        let vgg = NetworkSpec::vgg16();
        let p = gtx().calibrate(&vgg).unwrap();
        let dims = vgg.spatial_dims().unwrap();
        let total: f64 =
            dims.iter().enumerate().map(|(i, d)| compute_time(&vgg, i, d.output, &p).unwrap()).sum::<f64>() + p.t_fls;
        assert!((total - 0.0047).abs() < 1e-12, "{total}");
    }

    #[test]
    fn uncalibrated_profile_is_rejected() {
        let vgg = NetworkSpec::vgg16();
        assert!(matches!(compute_time(&vgg, 0, 10, &gtx()), Err(SchedError::Uncalibrated(_))));
        assert_eq!(compute_time(&vgg, 0, 0, &gtx()).unwrap(), 0.0);
    }

    #[test]
    fn time_is_linear_in_rows() {
        let vgg = NetworkSpec::vgg16();
        let p = gtx().calibrate(&vgg).unwrap();
        let full = compute_time(&vgg, 1, 224, &p).unwrap();
        let half = compute_time(&vgg, 1, 112, &p).unwrap();
        assert!((half / full - 0.5).abs() < 1.0 / 224.0);
    }

    #[test]
    fn table_mode_scales_measured_times() {
        let net = NetworkSpec::new("t", 8, 1, vec![crate::netspec::LayerSpec::conv(3, 1, 1, 1, 1)]).unwrap();
        let mut p = gtx();
        p.mode = TimingMode::Table;
        p.layer_times = Some(vec![0.008]);
        assert!((compute_time(&net, 0, 2, &p).unwrap() - 0.002).abs() < 1e-15);
        p.layer_times = Some(vec![0.008, 0.001]);
        assert!(matches!(compute_time(&net, 0, 2, &p), Err(SchedError::TableCoverage { .. })));
    }

    #[test]
    fn link_time() {
        let link = LinkProfile::gbps(40.0).unwrap();
        assert!((link.send_time(303_744) - 303_744.0 * 8.0 / 40e9).abs() < 1e-18);
        assert_eq!(link.send_time(0), 0.0);
        assert!(LinkProfile::new(0.0).is_err());
    }
}
