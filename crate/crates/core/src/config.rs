//! The experiment configuration document.
//!
//! One TOML file with a section per pipeline stage. Every field has a
//! stated default, unknown keys are rejected, and the canonical serialized
//! form is hashed so artifacts can prove which configuration produced them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netcore::model::ModelConfig;
use crate::synthgen::SynthConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_tpr_target() -> f64 {
    0.95
}
fn default_far_target() -> f64 {
    0.10
}
fn default_kld_bins() -> usize {
    50
}
fn default_kld_eps() -> f64 {
    1e-8
}
fn default_maf1_ratios() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0]
}
fn default_maf1_resamples() -> usize {
    5
}

/// Metric settings for the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Known-sample recall at which the false-acceptance rate is read.
    pub tpr_target: f64,
    /// False-acceptance rate at which the known-sample recall is read.
    pub far_target: f64,
    /// Histogram bins for the symmetric KL divergence of uncertainties.
    pub kld_bins: usize,
    /// Smoothing added to each histogram cell before renormalizing.
    pub kld_eps: f64,
    /// Unknown-to-known ratios (openness points) for open macro-F1.
    pub maf1_ratios: Vec<f64>,
    /// Random unknown subsamples drawn per openness point.
    pub maf1_resamples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tpr_target: default_tpr_target(),
            far_target: default_far_target(),
            kld_bins: default_kld_bins(),
            kld_eps: default_kld_eps(),
            maf1_ratios: default_maf1_ratios(),
            maf1_resamples: default_maf1_resamples(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("tpr_target", self.tpr_target), ("far_target", self.far_target)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.kld_bins == 0 {
            return Err("kld_bins must be at least 1".into());
        }
        if !self.kld_eps.is_finite() || self.kld_eps <= 0.0 {
            return Err(format!("kld_eps must be positive, got {}", self.kld_eps));
        }
        if self.maf1_ratios.is_empty() {
            return Err("maf1_ratios must not be empty".into());
        }
        for &r in &self.maf1_ratios {
            if !(r > 0.0 && r <= 1.0) {
                return Err(format!("maf1 ratio must lie in (0, 1], got {r}"));
            }
        }
        if self.maf1_resamples == 0 {
            return Err("maf1_resamples must be at least 1".into());
        }
        Ok(())
    }
}

fn default_subsets() -> usize {
    4
}

/// Scene-bias protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasConfig {
    /// Number of distance-ordered subsets per scenario; 20 matches the
    /// full-scale protocol, 4–8 keeps desk-scale subsets usable.
    pub subsets: usize,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            subsets: default_subsets(),
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.subsets < 2 {
            return Err(format!(
                "at least 2 subsets are needed to fit a line, got {}",
                self.subsets
            ));
        }
        Ok(())
    }
}

/// The whole experiment document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub bias: BiasConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.synth
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("synth: {e}")))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        self.eval
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("eval: {e}")))?;
        self.bias
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("bias: {e}")))?;
        Ok(())
    }

    /// Canonical serialized form: serde emits fields in declaration order,
    /// so equal configs produce byte-identical documents.
    pub fn canonical_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical form, lowercase hex.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let text = self.canonical_toml()?;
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        Ok(format!("{:x}", h.finalize()))
    }
}
