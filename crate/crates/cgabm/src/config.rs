//! Declarative experiment configuration.
//!
//! Configurations are TOML documents. Every key has a default, so an empty
//! file with only `kind` is a valid experiment. Defaults that depend on the
//! experiment kind are left unset in the file and filled in by
//! [`ExperimentConfig::resolved`], which is also the form that is hashed.

use std::path::{Path, PathBuf};

use cgabm_core::km::{default_measurement_count, SamplingMode};
use cgabm_core::prey::PpmParams;
use cgabm_core::voter::VoterRates;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CgError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    CompleteEvm,
    ClusteredEvm,
    RandomNetworkEvm,
    Ppm,
    Custom,
}

impl ExperimentKind {
    pub fn is_voter(self) -> bool {
        matches!(self, Self::CompleteEvm | Self::ClusteredEvm | Self::RandomNetworkEvm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Where artifacts are written. Not part of the configuration hash.
    pub output_dir: PathBuf,
    /// Number of agents; per cluster for `clustered_evm`.
    pub population: Option<u64>,
    pub rates: RatesConfig,
    pub network: NetworkConfig,
    pub ppm: PpmConfig,
    pub custom: CustomConfig,
    pub sampling: SamplingConfig,
    pub dictionary: DictionaryConfig,
    pub integrator: IntegratorConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::CompleteEvm,
            seed: 1,
            output_dir: PathBuf::from("out"),
            population: None,
            rates: RatesConfig::default(),
            network: NetworkConfig::default(),
            ppm: PpmConfig::default(),
            custom: CustomConfig::default(),
            sampling: SamplingConfig::default(),
            dictionary: DictionaryConfig::default(),
            integrator: IntegratorConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Voter-model rate constants; defaults are the cyclic reference rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub imitation: Vec<Vec<f64>>,
    pub exploration: Vec<Vec<f64>>,
    /// Imitation rates across clusters; the intra-cluster rates when unset.
    pub inter_cluster: Option<Vec<Vec<f64>>>,
    pub step_size: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        let r = VoterRates::reference();
        Self {
            imitation: r.imitation().to_vec(),
            exploration: r.exploration().to_vec(),
            inter_cluster: None,
            step_size: r.step_size(),
        }
    }
}

impl RatesConfig {
    pub fn voter_rates(&self) -> Result<VoterRates> {
        VoterRates::new(self.imitation.clone(), self.exploration.clone(), self.inter_cluster.clone(), self.step_size)
            .map_err(|e| CgError::Config(format!("rates: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Cluster sizes for `clustered_evm`; `population` sets equal sizes when this is empty.
    pub cluster_sizes: Vec<usize>,
    pub num_clusters: usize,
    /// Inter-cluster edge probability.
    pub p: f64,
    /// Edge probability of the `random_network_evm` graph.
    pub edge_probability: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { cluster_sizes: Vec::new(), num_clusters: 2, p: 0.2, edge_probability: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpmConfig {
    pub width: f64,
    pub height: f64,
    pub step_variance: f64,
    pub p_rep: f64,
    pub p_rep_pred: f64,
    pub p_death: f64,
    pub vision: f64,
    pub max_agents: usize,
    pub initial_prey: u64,
    pub initial_predators: u64,
    /// Runs and steps per run used to collect measurement points on the fly.
    pub collection_runs: usize,
    pub collection_steps: usize,
    /// Step limit of the extinction statistic.
    pub extinction_horizon: usize,
    /// Counts are divided by this before fitting.
    pub count_scale: f64,
}

impl Default for PpmConfig {
    fn default() -> Self {
        let t = PpmParams::table2();
        Self {
            width: t.width,
            height: t.height,
            step_variance: t.step_variance,
            p_rep: t.p_rep,
            p_rep_pred: t.p_rep_pred,
            p_death: t.p_death,
            vision: t.vision,
            max_agents: t.max_agents,
            initial_prey: 320,
            initial_predators: 40,
            collection_runs: 20,
            collection_steps: 500,
            extinction_horizon: 300,
            count_scale: 1.0,
        }
    }
}

impl PpmConfig {
    pub fn params(&self) -> Result<PpmParams> {
        let p = PpmParams {
            width: self.width,
            height: self.height,
            step_variance: self.step_variance,
            p_rep: self.p_rep,
            p_rep_pred: self.p_rep_pred,
            p_death: self.p_death,
            vision: self.vision,
            max_agents: self.max_agents,
        };
        p.validate().map_err(|e| CgError::Config(format!("ppm: {e}")))?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomConfig {
    /// Jump-model TOML file.
    pub model_file: Option<PathBuf>,
    /// Initial counts for on-the-fly collection of non-conserving models.
    pub initial_state: Vec<u32>,
    pub collection_runs: usize,
    pub collection_time: f64,
}

impl Default for CustomConfig {
    fn default() -> Self {
        Self { model_file: None, initial_state: Vec::new(), collection_runs: 10, collection_time: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    UniformSimplex,
    OnTheFly,
}

impl From<ModeConfig> for SamplingMode {
    fn from(m: ModeConfig) -> Self {
        match m {
            ModeConfig::UniformSimplex => SamplingMode::UniformSimplex,
            ModeConfig::OnTheFly => SamplingMode::OnTheFly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Measurement points; the measurement-count rule of the simplex size when unset.
    pub m: Option<usize>,
    pub k: usize,
    pub lag: Option<f64>,
    pub mode: Option<ModeConfig>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { m: None, k: 100, lag: None, mode: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryConfig {
    /// Highest monomial degree; transition order plus one when unset.
    pub max_degree: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Step size; 0.001 for voter models and 0.1 for the PPM when unset.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub paths: usize,
    pub save_stride: usize,
    /// Full-coordinate initial state: frequencies for voter models, counts for the PPM.
    pub initial_state: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { dt: None, t_end: 10.0, paths: 1000, save_stride: 10, initial_state: Vec::new() }
    }
}

/// Sweep grid: every combination of the nonempty axes, each run `repeats` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub population: Vec<u64>,
    pub k: Vec<usize>,
    pub m: Vec<usize>,
    pub repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { population: Vec::new(), k: Vec::new(), m: Vec::new(), repeats: 1 }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CgError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CgError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Loads `path` and applies `key = value` overrides with dotted keys.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CgError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CgError::Config(e.to_string()))?;
        for (key, value) in overrides {
            set_dotted(&mut table, key, parse_value(value))?;
        }
        table.try_into().map_err(|e: toml::de::Error| CgError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn population_or_default(&self) -> u64 {
        self.population.unwrap_or(match self.kind {
            ExperimentKind::CompleteEvm => 10,
            ExperimentKind::ClusteredEvm => 50,
            ExperimentKind::RandomNetworkEvm => 500,
            ExperimentKind::Ppm | ExperimentKind::Custom => 1,
        })
    }

    /// Cluster sizes of the clustered network.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        if self.network.cluster_sizes.is_empty() {
            vec![self.population_or_default() as usize; self.network.num_clusters]
        } else {
            self.network.cluster_sizes.clone()
        }
    }

    /// Configuration with every kind-dependent default made explicit.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        let d = c.rates.imitation.len();
        if c.kind.is_voter() {
            c.rates.voter_rates()?;
        }
        c.population = Some(c.population_or_default());
        if c.kind == ExperimentKind::ClusteredEvm {
            c.network.cluster_sizes = c.cluster_sizes();
            c.network.num_clusters = c.network.cluster_sizes.len();
        }
        let n = c.population.unwrap_or(1);
        if c.sampling.m.is_none() {
            c.sampling.m = Some(match c.kind {
                ExperimentKind::CompleteEvm | ExperimentKind::RandomNetworkEvm => default_measurement_count(n, d),
                _ => 1000,
            });
        }
        if c.sampling.lag.is_none() {
            c.sampling.lag = Some(if c.kind == ExperimentKind::Ppm { 1.0 } else { 0.01 });
        }
        if c.sampling.mode.is_none() {
            c.sampling.mode = Some(if c.kind == ExperimentKind::Ppm { ModeConfig::OnTheFly } else { ModeConfig::UniformSimplex });
        }
        if c.dictionary.max_degree.is_none() && c.kind != ExperimentKind::Custom {
            // Voter imitation and predation are second-order transitions.
            c.dictionary.max_degree = Some(3);
        }
        if c.integrator.dt.is_none() {
            c.integrator.dt = Some(if c.kind == ExperimentKind::Ppm { 0.1 } else { 0.001 });
        }
        if c.integrator.initial_state.is_empty() {
            c.integrator.initial_state = match c.kind {
                ExperimentKind::CompleteEvm | ExperimentKind::RandomNetworkEvm => vec![0.2, 0.7, 0.1],
                ExperimentKind::ClusteredEvm => vec![0.85, 0.1, 0.05, 0.2, 0.5, 0.3],
                ExperimentKind::Ppm => vec![c.ppm.initial_prey as f64, c.ppm.initial_predators as f64],
                ExperimentKind::Custom => c.custom.initial_state.iter().map(|&v| v as f64).collect(),
            };
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CgError::Config(msg));
        if self.sampling.k == 0 || self.sampling.m == Some(0) {
            return bad("sampling.m and sampling.k must be positive".into());
        }
        if let Some(lag) = self.sampling.lag {
            if !(lag > 0.0 && lag.is_finite()) {
                return bad(format!("sampling.lag must be positive, got {lag}"));
            }
        }
        if self.population == Some(0) {
            return bad("population must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.network.p) || !(0.0..=1.0).contains(&self.network.edge_probability) {
            return bad("edge probabilities must lie in [0, 1]".into());
        }
        let i = &self.integrator;
        let dt = i.dt.unwrap_or(i.t_end);
        if !(dt > 0.0 && i.t_end >= dt) || i.paths == 0 || i.save_stride == 0 {
            return bad("integrator needs 0 < dt <= t_end and positive paths and save_stride".into());
        }
        if self.sweep.repeats == 0 {
            return bad("sweep.repeats must be positive".into());
        }
        if self.kind == ExperimentKind::Ppm {
            self.ppm.params()?;
            let lag = self.sampling.lag.unwrap_or(1.0);
            if (lag - lag.round()).abs() > 1e-12 || lag < 1.0 {
                return bad(format!("ppm lag must be a whole number of steps, got {lag}"));
            }
            if !(self.ppm.count_scale > 0.0) {
                return bad("ppm.count_scale must be positive".into());
            }
        }
        if self.kind == ExperimentKind::Custom && self.custom.model_file.is_none() {
            return bad("custom experiments need custom.model_file".into());
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration without `output_dir`.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.resolved()?;
        c.output_dir = PathBuf::new();
        Ok(sha256_hex(c.to_toml_string().as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().ok_or_else(|| CgError::Config("empty override key".into()))?;
    let mut current = table;
    for part in parents {
        let entry = current.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| CgError::Config(format!("override key {key}: {part} is not a table")))?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

/// Splits `--key value` pairs; keys may use `-` or `_`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg.strip_prefix("--").ok_or_else(|| CgError::Config(format!("expected --key, got {arg}")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CgError::Config(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}
