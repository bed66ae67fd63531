//! Typed views of the reference fixtures shipped in the repository's
//! `fixtures/` directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::scheduler::{ModnnTimes, TimingTerms};

/// The repository's `fixtures/` directory.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, String> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Measured first-two-layer terms on a 40 Gbps link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Fixture {
    pub device: String,
    pub link_gbps: f64,
    pub terms: TimingTerms,
    pub reference: Table1Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Reference {
    /// Conventional per-layer times, ms.
    pub conventional_ms: Vec<f64>,
    /// Communication share of each conventional layer time.
    pub comm_share: Vec<f64>,
    pub host_end_g1_ms: f64,
    pub total_ms: f64,
}

/// Batch throughput references for four tasks on nine servers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Fixture {
    pub n_tasks: usize,
    pub n_servers: usize,
    pub rates_gbps: Vec<f64>,
    pub devices: Vec<Table2Device>,
    pub speedup: Table2Speedup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Device {
    pub device: String,
    pub t_pre_ms: f64,
    #[serde(default)]
    pub t_h_ms: Option<f64>,
    #[serde(default)]
    pub t_m_ms: Option<f64>,
    #[serde(default)]
    pub t_m_e1_ms: Option<f64>,
    #[serde(default)]
    pub t_m_e2_ms: Option<f64>,
    #[serde(default)]
    pub reference_rate_gbps: Option<f64>,
    pub throughput: Table2Throughput,
}

impl Table2Device {
    /// Reported MoDNN single-task times, when all three are given.
    pub fn modnn_times(&self) -> Option<ModnnTimes> {
        Some(ModnnTimes { t_m: self.t_m_ms? * 1e-3, t_m_e1: self.t_m_e1_ms? * 1e-3, t_m_e2: self.t_m_e2_ms? * 1e-3 })
    }
}

/// Frames per second, one entry per link rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Throughput {
    pub standalone: Vec<f64>,
    pub modnn_original: Vec<f64>,
    pub modnn_enhanced: Vec<f64>,
    pub halp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Speedup {
    pub gtx_single_x: f64,
    pub xavier_single_x: f64,
    pub modnn_enhanced_rho: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::NetworkSpec;
    use crate::reliability::ReliabilityTable;
    use crate::scheduler::DeviceProfile;

    #[test]
    fn shipped_fixtures_parse() {
        let dir = fixtures_dir();
        assert_eq!(NetworkSpec::load(dir.join("vgg16.json")).unwrap(), NetworkSpec::vgg16());
        NetworkSpec::load(dir.join("toy8.json")).unwrap();
        for p in ["gtx1080ti.json", "xavier.json"] {
            DeviceProfile::load(dir.join(p)).unwrap();
        }
        let t1: Table1Fixture = load_json(dir.join("table1.json")).unwrap();
        t1.terms.validate().unwrap();
        let t2: Table2Fixture = load_json(dir.join("table2.json")).unwrap();
        assert!(t2.devices[0].modnn_times().is_some());
        let t3: ReliabilityTable = load_json(dir.join("table3.json")).unwrap();
        assert_eq!(t3.evaluate().unwrap().len(), 14);
    }
}
