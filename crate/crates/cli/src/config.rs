//! Project configuration: what to build, how finely, and which certificates,
//! bounds, synthesis and simulation settings to use.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stochswitch::certificates::ModeCertificate;
use stochswitch::model::{BoxSet, NetworkSpec};
use stochswitch::presets;

use crate::network::NetworkFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    TrafficRing {
        size: usize,
        #[serde(default = "one")]
        noise_std: f64,
    },
    NonlinearNetwork {
        size: usize,
    },
    /// Path relative to the config file.
    File {
        path: PathBuf,
    },
    Inline(NetworkFile),
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// State discretization δ̄ (every dimension of every subsystem).
    pub state_delta: f64,
    /// Internal-input discretization; equals `state_delta` when absent.
    #[serde(default)]
    pub input_delta: Option<f64>,
    /// Abstract outputs coincide with abstract internal inputs.
    #[serde(default = "yes")]
    pub matched_io: bool,
    #[serde(default = "default_cap")]
    pub memory_cap_bytes: u64,
}

fn yes() -> bool {
    true
}

fn default_cap() -> u64 {
    4 << 30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CertificateSource {
    /// Published certificate of a reference network, used verbatim.
    Preset { name: CertificatePreset },
    /// JSON file with one certificate, or a list with one per subsystem.
    File { path: PathBuf },
    /// Run the constant pipeline from per-mode matrices.
    Derive(DeriveConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificatePreset {
    Traffic,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveConfig {
    pub modes: Vec<ModeCertificate>,
    pub epsilon: f64,
    #[serde(default)]
    pub dwell_time: Option<usize>,
    #[serde(default)]
    pub common_lyapunov: bool,
    #[serde(default)]
    pub pi_tilde: Option<f64>,
    #[serde(default)]
    pub delta_c: Option<f64>,
    #[serde(default = "default_kappa_ceiling")]
    pub kappa_ceiling: f64,
    #[serde(default)]
    pub rho_ceiling: Option<f64>,
}

fn default_kappa_ceiling() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub tuples: usize,
    pub inner_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub source: CertificateSource,
    /// Fail when a supplied matrix inequality does not hold.
    #[serde(default = "yes")]
    pub strict_lmi: bool,
    #[serde(default)]
    pub validate: Option<ValidateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeConfig {
    #[serde(default = "default_lambda")]
    pub lambda_bar: f64,
    #[serde(default = "default_delta_f")]
    pub delta_f: f64,
}

fn default_lambda() -> f64 {
    1.1
}

fn default_delta_f() -> f64 {
    0.05
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self {
            lambda_bar: default_lambda(),
            delta_f: default_delta_f(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub epsilon: f64,
    pub horizon: u32,
    /// Initial value of the composed function; computed from the initial
    /// states when absent.
    #[serde(default)]
    pub v0: Option<f64>,
    #[serde(default)]
    pub table_deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    pub box_length: f64,
    pub modes: u64,
    pub subsystems: u64,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    /// One box for every subsystem, or one per subsystem. Defaults to the
    /// state boxes.
    #[serde(default)]
    pub safe: Option<SafeBoxes>,
    pub horizon: usize,
    #[serde(default)]
    pub cooperative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SafeBoxes {
    Shared(BoxSet),
    PerSubsystem(Vec<BoxSet>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialStates {
    Shared(Vec<f64>),
    PerSubsystem(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    pub initial_states: InitialStates,
    #[serde(default)]
    pub initial_modes: Option<Vec<usize>>,
    #[serde(default)]
    pub record: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub network: NetworkSource,
    pub grid: GridConfig,
    pub certificates: CertifyConfig,
    #[serde(default)]
    pub composition: ComposeConfig,
    pub bound: BoundConfig,
    #[serde(default)]
    pub memory: Option<MemoryConfig>,
    pub synthesis: SynthesisConfig,
    pub simulation: SimulationConfig,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub size: Option<usize>,
    pub runs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ProjectConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config key `{path}`: {}", e.into_inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.delta {
            self.grid.state_delta = d;
        }
        if let Some(e) = o.epsilon {
            self.bound.epsilon = e;
        }
        if let Some(h) = o.horizon {
            self.bound.horizon = h as u32;
            self.synthesis.horizon = h;
        }
        if let Some(s) = o.seed {
            self.simulation.seed = s;
        }
        if let Some(n) = o.size {
            match &mut self.network {
                NetworkSource::TrafficRing { size, .. } | NetworkSource::NonlinearNetwork { size } => *size = n,
                _ => {}
            }
        }
        if let Some(r) = o.runs {
            self.simulation.runs = r;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.state_delta > 0.0) || g.input_delta.is_some_and(|d| !(d > 0.0)) {
            bail!("config key `grid`: discretization parameters must be positive");
        }
        if !(self.bound.epsilon > 0.0) {
            bail!("config key `bound.epsilon`: must be positive");
        }
        if !(self.composition.lambda_bar > 1.0) || !(self.composition.delta_f > 0.0) {
            bail!("config key `composition`: lambda_bar must exceed 1 and delta_f be positive");
        }
        if self.simulation.runs == 0 {
            bail!("config key `simulation.runs`: at least one run is required");
        }
        Ok(())
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        let net = match &self.network {
            NetworkSource::TrafficRing { size, noise_std } => presets::traffic_ring(*size, *noise_std)?,
            NetworkSource::NonlinearNetwork { size } => presets::nonlinear_network(*size)?,
            NetworkSource::File { path } => {
                let path = self.resolve(path);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading network {}", path.display()))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                let file: NetworkFile = serde_path_to_error::deserialize(de).map_err(|e| {
                    let key = e.path().to_string();
                    anyhow::anyhow!("network key `{key}`: {}", e.into_inner())
                })?;
                file.build()?
            }
            NetworkSource::Inline(file) => file.build()?,
        };
        if net.is_empty() {
            bail!("config key `network`: the network has no subsystems");
        }
        Ok(net)
    }

    pub fn input_delta(&self) -> f64 {
        match self.grid.input_delta {
            Some(d) if !self.grid.matched_io => d,
            _ => self.grid.state_delta,
        }
    }

    pub fn initial_states(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        match &self.simulation.initial_states {
            InitialStates::Shared(x) => Ok(vec![x.clone(); n]),
            InitialStates::PerSubsystem(xs) if xs.len() == n => Ok(xs.clone()),
            InitialStates::PerSubsystem(xs) => bail!(
                "config key `simulation.initial_states`: {} entries for {n} subsystems",
                xs.len()
            ),
        }
    }

    pub fn initial_modes(&self, n: usize) -> Result<Vec<usize>> {
        match &self.simulation.initial_modes {
            None => Ok(vec![0; n]),
            Some(m) if m.len() == 1 => Ok(vec![m[0]; n]),
            Some(m) if m.len() == n => Ok(m.clone()),
            Some(m) => bail!("config key `simulation.initial_modes`: {} entries for {n} subsystems", m.len()),
        }
    }

    pub fn safe_boxes(&self, net: &NetworkSpec) -> Result<Vec<BoxSet>> {
        match &self.synthesis.safe {
            None => Ok(net.subsystems.iter().map(|s| s.state_box.clone()).collect()),
            Some(SafeBoxes::Shared(b)) => Ok(vec![b.clone(); net.len()]),
            Some(SafeBoxes::PerSubsystem(bs)) if bs.len() == net.len() => Ok(bs.clone()),
            Some(SafeBoxes::PerSubsystem(bs)) => bail!(
                "config key `synthesis.safe`: {} boxes for {} subsystems",
                bs.len(),
                net.len()
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "network": {"kind": "traffic_ring", "size": 3},
        "grid": {"state_delta": 0.5},
        "certificates": {"source": {"kind": "preset", "name": "traffic"}},
        "bound": {"epsilon": 1.0, "horizon": 5},
        "synthesis": {"horizon": 5},
        "simulation": {"runs": 10, "initial_states": [8.0]}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ProjectConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.composition, ComposeConfig::default());
        assert!(cfg.grid.matched_io);
        assert_eq!(cfg.input_delta(), 0.5);
        assert_eq!(cfg.initial_states(3).unwrap(), vec![vec![8.0]; 3]);
        assert_eq!(cfg.initial_modes(3).unwrap(), vec![0; 3]);
        assert_eq!(cfg.network().unwrap().len(), 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_name_the_key() {
        // tagged sections report the section itself
        let bad = MINIMAL.replace("\"size\": 3", "\"size\": \"three\"");
        let err = ProjectConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("`network`") && err.contains("three"), "{err}");
        let bad = MINIMAL.replace("\"runs\": 10", "\"runs\": -1");
        let err = ProjectConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("simulation.runs"), "{err}");
        let unknown = MINIMAL.replace("\"horizon\": 5}", "\"horizon\": 5, \"bogus\": 1}");
        let err = ProjectConfig::from_json(&unknown).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = ProjectConfig::from_json(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            delta: Some(0.25),
            horizon: Some(9),
            size: Some(7),
            ..Default::default()
        });
        assert_eq!(cfg.grid.state_delta, 0.25);
        assert_eq!(cfg.bound.horizon, 9);
        assert_eq!(cfg.synthesis.horizon, 9);
        assert_eq!(cfg.network().unwrap().len(), 7);
    }
}
