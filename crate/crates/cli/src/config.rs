use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use halp::netspec::NetworkSpec;
use halp::partition::SplitRatios;
use halp::scheduler::{DeviceProfile, ModnnTimes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Scheme {
    Halp,
    Conventional,
    ModnnOriginal,
    ModnnEnhanced,
    Standalone,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Halp => "halp",
            Scheme::Conventional => "conventional",
            Scheme::ModnnOriginal => "modnn_original",
            Scheme::ModnnEnhanced => "modnn_enhanced",
            Scheme::Standalone => "standalone",
        }
    }
}

/// How output rows are divided between the servers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    #[default]
    Balanced,
    Standalone,
    /// The same `[e1, e0, e2]` fractions on every layer.
    Uniform([f64; 3]),
}

impl SplitPolicy {
    /// `balanced`, `standalone`, or three comma-separated fractions
    /// (decimals or `a/b`) for `e1,e0,e2`.
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "balanced" => Ok(Self::Balanced),
            "standalone" => Ok(Self::Standalone),
            list => {
                let parts: Vec<f64> = list.split(',').map(parse_fraction).collect::<Result<_>>()?;
                let fractions: [f64; 3] = parts
                    .try_into()
                    .map_err(|p: Vec<f64>| anyhow::anyhow!("expected three ratios e1,e0,e2, got {}", p.len()))?;
                Ok(Self::Uniform(fractions))
            }
        }
    }

    pub fn ratios(&self, network: &NetworkSpec) -> Result<SplitRatios> {
        let ratios = match self {
            Self::Balanced => SplitRatios::balanced(network),
            Self::Standalone => Ok(SplitRatios::standalone(network)),
            Self::Uniform(f) => SplitRatios::uniform(network, *f),
        };
        ratios.context("invalid split ratios")
    }
}

fn parse_fraction(text: &str) -> Result<f64> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((n, d)) => n.trim().parse::<f64>()? / d.trim().parse::<f64>()?,
        None => text.parse::<f64>()?,
    };
    if !value.is_finite() {
        bail!("ratio {text} is not a finite number");
    }
    Ok(value)
}

/// Single-task MoDNN times given directly instead of modelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModnnTimesMs {
    pub t_m: f64,
    pub t_m_e1: f64,
    pub t_m_e2: f64,
}

impl From<ModnnTimesMs> for ModnnTimes {
    fn from(t: ModnnTimesMs) -> Self {
        ModnnTimes { t_m: t.t_m * 1e-3, t_m_e1: t.t_m_e1 * 1e-3, t_m_e2: t.t_m_e2 * 1e-3 }
    }
}

/// IoT-to-host offloading channel; when present every run also reports
/// its deadline reliability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadConfig {
    pub rate_mbps: f64,
    pub sigma_ms: f64,
    pub payload_bits: f64,
    pub deadline_ms: f64,
}

/// Reference figures the runs are compared against, cell by cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioReference {
    /// Label of the table the references come from.
    #[serde(default)]
    pub table: Option<String>,
    /// Frames per second, one entry per rate, keyed by scheme.
    #[serde(default)]
    pub throughput_fps: std::collections::BTreeMap<Scheme, Vec<f64>>,
    #[serde(default)]
    pub rho: std::collections::BTreeMap<Scheme, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default = "default_summary")]
    pub summary: PathBuf,
    #[serde(default = "default_events")]
    pub events: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self { summary: default_summary(), events: default_events() }
    }
}

fn default_summary() -> PathBuf {
    "summary.json".into()
}

fn default_events() -> PathBuf {
    "events.csv".into()
}

fn one() -> usize {
    1
}

fn nine() -> usize {
    9
}

/// A simulation scenario. Paths are relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub network: Option<PathBuf>,
    #[serde(default)]
    pub profile: Option<PathBuf>,
    #[serde(default)]
    pub rates_gbps: Vec<f64>,
    #[serde(default = "one")]
    pub n_tasks: usize,
    /// Cluster size for the MoDNN baselines.
    #[serde(default = "nine")]
    pub n_servers: usize,
    #[serde(default)]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub split: SplitPolicy,
    /// Measured timing terms (a `table1.json`-shaped fixture) to use for
    /// `halp` and `conventional` instead of modelled ones.
    #[serde(default)]
    pub terms: Option<PathBuf>,
    #[serde(default)]
    pub modnn_times_ms: Option<ModnnTimesMs>,
    /// Measured HALP batch latency, used instead of the modelled one.
    #[serde(default)]
    pub halp_latency_ms: Option<f64>,
    /// Standalone inference time, overriding the profile's.
    #[serde(default)]
    pub t_pre_ms: Option<f64>,
    #[serde(default)]
    pub offload: Option<OffloadConfig>,
    #[serde(default)]
    pub reference: Option<ScenarioReference>,
    #[serde(default)]
    pub outputs: OutputPaths,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: None,
            network: None,
            profile: None,
            rates_gbps: Vec::new(),
            n_tasks: 1,
            n_servers: 9,
            schemes: Vec::new(),
            split: SplitPolicy::default(),
            terms: None,
            modnn_times_ms: None,
            halp_latency_ms: None,
            t_pre_ms: None,
            offload: None,
            reference: None,
            outputs: OutputPaths::default(),
        }
    }
}

impl ScenarioConfig {
    /// Reads a scenario and makes its paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
        let mut config: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.network, &mut config.profile, &mut config.terms].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if config.name.is_none() {
            config.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            bail!("scenario lists no schemes");
        }
        if self.n_tasks == 0 {
            bail!("n_tasks must be at least 1");
        }
        if self.n_servers == 0 {
            bail!("n_servers must be at least 1");
        }
        if let Some(r) = self.rates_gbps.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            bail!("link rates must be positive, got {r}");
        }
        for p in [&self.network, &self.profile, &self.terms].into_iter().flatten() {
            if !p.is_file() {
                bail!("referenced fixture {} does not exist", p.display());
            }
        }
        let modelled = self.schemes.iter().any(|s| match s {
            Scheme::Halp => self.terms.is_none() && self.halp_latency_ms.is_none(),
            Scheme::Conventional => self.terms.is_none(),
            Scheme::ModnnOriginal | Scheme::ModnnEnhanced => self.modnn_times_ms.is_none(),
            Scheme::Standalone => false,
        });
        if modelled {
            if self.network.is_none() || self.profile.is_none() {
                bail!("modelled schemes need both a network and a profile");
            }
            if self.rates_gbps.is_empty() && self.terms.is_none() {
                bail!("modelled schemes need at least one link rate");
            }
        }
        if self.profile.is_none() && self.t_pre_ms.is_none() {
            bail!("need a profile or t_pre_ms for speedup figures");
        }
        Ok(())
    }

    pub fn load_network(&self) -> Result<Option<NetworkSpec>> {
        self.network
            .as_ref()
            .map(|p| NetworkSpec::load(p).with_context(|| format!("loading network {}", p.display())))
            .transpose()
    }

    /// The device profile, calibrated on `network` when both are given.
    pub fn load_profile(&self, network: Option<&NetworkSpec>) -> Result<Option<DeviceProfile>> {
        let Some(path) = &self.profile else { return Ok(None) };
        let profile = DeviceProfile::load(path).with_context(|| format!("loading profile {}", path.display()))?;
        Ok(Some(match network {
            Some(net) if !profile.is_calibrated() => profile.calibrate(net)?,
            _ => profile,
        }))
    }
}

/// Comma-separated positive numbers.
pub fn parse_rates(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|r| {
            let v: f64 = r.trim().parse().with_context(|| format!("bad rate {r:?}"))?;
            if !(v > 0.0 && v.is_finite()) {
                bail!("link rates must be positive, got {v}");
            }
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_policy_parsing() {
        assert_eq!(SplitPolicy::parse("balanced").unwrap(), SplitPolicy::Balanced);
        assert_eq!(SplitPolicy::parse("1/2, 0, 1/2").unwrap(), SplitPolicy::Uniform([0.5, 0.0, 0.5]));
        assert!(SplitPolicy::parse("0.5,0.5").is_err());
        assert!(SplitPolicy::parse("a,b,c").is_err());
    }

    #[test]
    fn ratio_sum_is_enforced() {
        let net = NetworkSpec::vgg16();
        let err = SplitPolicy::parse("0.4,0.1,0.4").unwrap().ratios(&net).unwrap_err();
        assert!(format!("{err:#}").contains("must sum to 1"), "{err:#}");
    }

    #[test]
    fn rates() {
        assert_eq!(parse_rates("40, 100").unwrap(), vec![40.0, 100.0]);
        assert!(parse_rates("40,-1").is_err());
    }
}
