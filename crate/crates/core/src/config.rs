//! Experiment configuration with defaults, validation and dotted-path overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::learner::TaskParams;
use crate::privacy::{DpConfig, ExposureMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot apply override {key}={value}: {reason}")]
    Override {
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot read configuration: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse configuration: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    DoSnm,
    Ra,
    Lg,
    Rd,
    Ed,
    /// Every admissible client, fast greedy association, KKT allocation.
    Full,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::DoSnm,
        Algorithm::Ra,
        Algorithm::Lg,
        Algorithm::Rd,
        Algorithm::Ed,
        Algorithm::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DoSnm => "do-snm",
            Algorithm::Ra => "ra",
            Algorithm::Lg => "lg",
            Algorithm::Rd => "rd",
            Algorithm::Ed => "ed",
            Algorithm::Full => "full",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key || (key == "dosnm" && *a == Algorithm::DoSnm))
            .ok_or_else(|| ConfigError::Invalid(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Edge iterations per global round.
    pub tau: u32,
    pub capacitance: f64,
    /// Per-ES bandwidth, Hz.
    pub bandwidth: f64,
    pub cpu_min: f64,
    pub cpu_max: f64,
    pub n0: f64,
    pub tx_power: (f64, f64),
    pub carrier_ghz: (f64, f64),
    pub t0: f64,
    pub cycles_per_sample: f64,
    pub lambda0: f64,
    /// Use this many local iterations for every client instead of scaling by
    /// data size.
    pub local_iters: Option<u32>,
    pub learning_rate: f64,
    /// Upload size; defaults to 32 bits per model parameter.
    pub model_bits: Option<f64>,
    pub solver_tol: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            tau: 1,
            capacitance: 2e-28,
            bandwidth: 10e6,
            cpu_min: 1e9,
            cpu_max: 10e9,
            n0: 4e-21,
            tx_power: (0.1, 1.0),
            carrier_ghz: (1.0, 4.0),
            t0: 0.5,
            cycles_per_sample: 90822.0,
            lambda0: 5.0,
            local_iters: None,
            learning_rate: 0.05,
            model_bits: None,
            solver_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub width: f64,
    pub height: f64,
    pub n_es: usize,
    pub n_clients: usize,
    pub coverage_radius: f64,
    /// Seconds of movement between global rounds.
    pub dt: f64,
    pub avg_degree: f64,
    pub private_size: (u64, u64),
    pub shared_size: (u64, u64),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            width: 1000.0,
            height: 1000.0,
            n_es: 4,
            n_clients: 60,
            coverage_radius: 2000.0,
            dt: 10.0,
            avg_degree: 4.0,
            private_size: (5, 30),
            shared_size: (2, 10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub r_ef0: f64,
    /// PEMO candidates per selection size.
    pub xi: usize,
    pub retries: usize,
    /// Clients drawn by the random baselines; defaults to `H`.
    pub baseline_clients: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            r_ef0: 0.6,
            xi: 10,
            retries: 10,
            baseline_clients: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Clipping threshold `W`.
    pub clip: f64,
    pub exposure: ExposureMode,
    /// Fixed `C^n`, overriding the exposure mode.
    pub client_exposures: Option<f64>,
    /// Fixed `C^k`, overriding the exposure mode.
    pub es_exposures: Option<f64>,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            epsilon: 80.0,
            delta: 1e-5,
            clip: 20.0,
            exposure: ExposureMode::PerRound,
            client_exposures: None,
            es_exposures: None,
        }
    }
}

impl PrivacyConfig {
    pub fn dp_config(&self, tau: u32, round: usize) -> DpConfig {
        let (cn, ck) = crate::privacy::exposure_counts(self.exposure, tau, round);
        DpConfig {
            epsilon: self.epsilon,
            delta: self.delta,
            clip: self.clip,
            client_exposures: self.client_exposures.unwrap_or(cn),
            es_exposures: self.es_exposures.unwrap_or(ck),
        }
    }
}

/// Replace the random community by one with a prescribed amount of effective
/// and redundant data, trained with full participation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataMixConfig {
    pub effective: u64,
    pub redundant: u64,
    pub n_clients: usize,
    /// Size of each shared block (the last one takes the remainder).
    pub shared_block: u64,
}

impl Default for DataMixConfig {
    fn default() -> Self {
        Self {
            effective: 8000,
            redundant: 3000,
            n_clients: 20,
            shared_block: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub algorithm: Algorithm,
    pub system: SystemConfig,
    pub scenario: ScenarioConfig,
    pub selection: SelectionConfig,
    pub privacy: Option<PrivacyConfig>,
    pub task: TaskParams,
    pub data_mix: Option<DataMixConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            rounds: 50,
            algorithm: Algorithm::DoSnm,
            system: SystemConfig::default(),
            scenario: ScenarioConfig::default(),
            selection: SelectionConfig::default(),
            privacy: Some(PrivacyConfig::default()),
            task: TaskParams::default(),
            data_mix: None,
        }
    }
}

fn range_ok((lo, hi): (f64, f64)) -> bool {
    lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi
}

impl ExperimentConfig {
    /// Load a configuration, or the `config` member of a scenario snapshot.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut v: Value = serde_json::from_str(&text)?;
        if let Some(inner) = v.get_mut("config") {
            v = inner.take();
        }
        Ok(serde_json::from_value(v)?)
    }

    /// Set one field by dotted path; the value is parsed as JSON and falls
    /// back to a plain string.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let err = |reason: String| ConfigError::Override {
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        let mut root = serde_json::to_value(&*self).map_err(|e| err(e.to_string()))?;
        let parsed: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for (i, part) in parts.iter().enumerate() {
            let obj = match node {
                Value::Object(o) => o,
                Value::Null => {
                    // materialise an optional section from its defaults
                    *node = default_section(&parts[..i]).ok_or_else(|| err(format!("{part} is not a section")))?;
                    node.as_object_mut().expect("defaults are objects")
                }
                _ => return Err(err(format!("{} is not a section", parts[..i].join(".")))),
            };
            if !obj.contains_key(*part) {
                return Err(err(format!("unknown key {part}")));
            }
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), parsed.clone());
                break;
            }
            node = obj.get_mut(*part).expect("checked above");
        }
        *self = serde_json::from_value(root).map_err(|e| err(e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let s = &self.system;
        if s.tau == 0 {
            return bad("system.tau must be at least 1".into());
        }
        for (name, v) in [
            ("system.capacitance", s.capacitance),
            ("system.bandwidth", s.bandwidth),
            ("system.cpu_min", s.cpu_min),
            ("system.cpu_max", s.cpu_max),
            ("system.n0", s.n0),
            ("system.t0", s.t0),
            ("system.cycles_per_sample", s.cycles_per_sample),
            ("system.lambda0", s.lambda0),
            ("system.learning_rate", s.learning_rate),
            ("system.solver_tol", s.solver_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if s.cpu_min > s.cpu_max {
            return bad("system.cpu_min exceeds system.cpu_max".into());
        }
        if !range_ok(s.tx_power) || !range_ok(s.carrier_ghz) {
            return bad("system.tx_power and system.carrier_ghz need 0 < min <= max".into());
        }
        if s.local_iters == Some(0) {
            return bad("system.local_iters must be at least 1".into());
        }
        if let Some(z) = s.model_bits {
            if !(z.is_finite() && z >= 0.0) {
                return bad(format!("system.model_bits must be nonnegative, got {z}"));
            }
        }
        let c = &self.scenario;
        if !(c.width > 0.0 && c.height > 0.0 && c.coverage_radius > 0.0 && c.dt >= 0.0) {
            return bad("scenario dimensions, coverage_radius and dt must be positive".into());
        }
        if c.n_es == 0 || c.n_clients == 0 {
            return bad("scenario.n_es and scenario.n_clients must be at least 1".into());
        }
        let sel = &self.selection;
        if !(sel.r_ef0 > 0.0 && sel.r_ef0 <= 1.0) {
            return bad(format!("selection.r_ef0 must lie in (0, 1], got {}", sel.r_ef0));
        }
        if sel.xi == 0 {
            return bad("selection.xi must be at least 1".into());
        }
        if sel.baseline_clients == Some(0) {
            return bad("selection.baseline_clients must be at least 1".into());
        }
        if let Some(p) = &self.privacy {
            p.dp_config(s.tau, 0)
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("privacy: {e}")))?;
        }
        self.task.validate().map_err(|e| ConfigError::Invalid(format!("task: {e}")))?;
        if let Some(m) = &self.data_mix {
            if m.n_clients < 2 || m.shared_block == 0 {
                return bad("data_mix needs at least two clients and a positive shared_block".into());
            }
            if m.redundant > m.effective {
                return bad("data_mix.redundant cannot exceed data_mix.effective".into());
            }
            if m.effective - m.redundant < m.n_clients as u64 {
                return bad("data_mix needs at least one private sample per client".into());
            }
        }
        Ok(())
    }
}

fn default_section(path: &[&str]) -> Option<Value> {
    match path {
        ["privacy"] => serde_json::to_value(PrivacyConfig::default()).ok(),
        ["data_mix"] => serde_json::to_value(DataMixConfig::default()).ok(),
        ["system", "local_iters"] | ["system", "model_bits"] | ["selection", "baseline_clients"] => None,
        _ => None,
    }
}
