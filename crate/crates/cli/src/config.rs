use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flexenv_core::envelope::Formulation;
use flexenv_core::instance::InstanceConfig;
use flexenv_core::market::ActivationParams;
use flexenv_core::provision::{Priority, ScenarioConfig, ScenarioMode};

use crate::exit::ConfigError;

/// Where the building model comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSource {
    /// JSON model document; a synthetic building is generated when absent.
    pub file: Option<PathBuf>,
    pub building_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Number of synthetic training days.
    pub training_days: usize,
    /// Cluster count; the averaged policy is trained when absent.
    pub clusters: Option<usize>,
    pub hour: u32,
    /// Existing policy library used by UAF-fixed instead of training one.
    pub library: Option<PathBuf>,
    /// Sample counts of the distance table written by `train-policies`.
    pub sample_counts: Vec<usize>,
    /// Held-out days the distance table is evaluated on.
    pub held_out_days: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            training_days: 10,
            clusters: None,
            hour: 0,
            library: None,
            sample_counts: vec![1, 2, 5, 10],
            held_out_days: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub multipliers: Vec<f64>,
    pub scenario: ScenarioConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            multipliers: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            scenario: ScenarioConfig::intraday(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub formulation: Formulation,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            formulation: Formulation::Ua,
        }
    }
}

/// Complete description of a batch of experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// First run seed; run `i` uses `seed + i` as its day and noise seed.
    pub seed: u64,
    /// Number of runs (days).
    pub seeds: usize,
    pub output: PathBuf,
    pub model: ModelSource,
    pub instance: InstanceConfig,
    /// Comfort band widths of the `envelope` grid (degC).
    pub comfort_widths: Vec<f64>,
    /// Comfort risk levels of the `envelope` grid.
    pub eps_c: Vec<f64>,
    pub formulations: Vec<Formulation>,
    pub scenarios: Vec<ScenarioConfig>,
    /// Price CSV used for every run; synthetic prices per seed when absent.
    pub prices: Option<PathBuf>,
    pub activation: ActivationParams,
    pub policies: PolicyConfig,
    pub sweep: SweepConfig,
    pub montecarlo: MonteCarloConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 1,
            output: PathBuf::from("out"),
            model: ModelSource::default(),
            instance: InstanceConfig::default(),
            comfort_widths: vec![1.0, 2.0, 3.0],
            eps_c: vec![0.2],
            formulations: vec![Formulation::Ui, Formulation::Ua],
            scenarios: vec![
                ScenarioConfig::intraday(),
                ScenarioConfig::new(ScenarioMode::Rebound, Priority::FlexibilityFirst),
                ScenarioConfig::new(ScenarioMode::Rebound, Priority::ComfortFirst),
            ],
            prices: None,
            activation: ActivationParams::default(),
            policies: PolicyConfig::default(),
            sweep: SweepConfig::default(),
            montecarlo: MonteCarloConfig::default(),
        }
    }
}

fn fail(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

impl ExperimentConfig {
    /// Reads a TOML document; missing fields take their defaults.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| fail(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.instance.validate().map_err(|e| fail(format!("instance: {e}")))?;
        self.activation.validate().map_err(|e| fail(format!("activation: {e}")))?;
        if self.seeds == 0 {
            return Err(fail("seeds: at least one run is required"));
        }
        if self.comfort_widths.is_empty() || self.comfort_widths.iter().any(|w| !(*w > 0.0)) {
            return Err(fail("comfort_widths: need at least one positive width"));
        }
        if self.eps_c.is_empty() {
            return Err(fail("eps_c: need at least one risk level"));
        }
        if let Some(e) = self.eps_c.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(fail(format!("eps_c: risk level {e} is outside (0, 1)")));
        }
        if self.formulations.is_empty() {
            return Err(fail("formulations: need at least one formulation"));
        }
        if self.scenarios.is_empty() {
            return Err(fail("scenarios: need at least one scenario"));
        }
        for (i, s) in self.scenarios.iter().chain([&self.sweep.scenario]).enumerate() {
            s.validate().map_err(|e| fail(format!("scenarios[{i}]: {e}")))?;
        }
        if self.sweep.multipliers.is_empty() || self.sweep.multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(fail("sweep.multipliers: need at least one positive multiplier"));
        }
        if self.montecarlo.samples == 0 {
            return Err(fail("montecarlo.samples: need at least one sample"));
        }
        if self.montecarlo.formulation == Formulation::UafFixed {
            return Err(fail("montecarlo.formulation: UAF-fixed is not supported"));
        }
        if self.policies.training_days == 0 {
            return Err(fail("policies.training_days: need at least one training day"));
        }
        if self.policies.clusters.is_some_and(|k| k == 0 || k > self.policies.training_days) {
            return Err(fail("policies.clusters: must lie in 1..=training_days"));
        }
        if self.policies.sample_counts.iter().any(|&n| n == 0 || n > self.policies.training_days) {
            return Err(fail("policies.sample_counts: counts must lie in 1..=training_days"));
        }
        if self.policies.hour > 23 {
            return Err(fail("policies.hour: must lie in 0..=23"));
        }
        for (field, path) in [
            ("model.file", &self.model.file),
            ("prices", &self.prices),
            ("policies.library", &self.policies.library),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(fail(format!("{field}: file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the resolved configuration document, without the output directory.
    pub fn hash(&self) -> anyhow::Result<String> {
        let content = Self {
            output: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(content.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Run seeds of the batch.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn partial_documents_fill_in_defaults() {
        let cfg: ExperimentConfig = toml::from_str("seeds = 3\n[instance]\neps_c = 0.1\n").unwrap();
        assert_eq!(cfg.seeds, 3);
        assert_eq!(cfg.instance.eps_c, 0.1);
        assert_eq!(cfg.instance.rooms, InstanceConfig::default().rooms);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
