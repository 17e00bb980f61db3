use std::path::Path;

use roughquant::mckean::CoefficientSpec;
use roughquant::quant::QuantOptions;
use roughquant::wasserstein::PathMetric;
use roughquant::BmSampler;
use serde::{Deserialize, Serialize};

/// Rejected configuration, naming the offending field.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.to_string(), message: message.into() }
}

/// Gaussian initial law, quantized to `m` points before solving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialLaw {
    pub mean: Vec<f64>,
    pub std: f64,
    #[serde(default = "default_initial_samples")]
    pub samples: usize,
    #[serde(default)]
    pub m: Option<usize>,
}

fn default_initial_samples() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub alpha: f64,
    /// Noise dimension `d'`.
    pub noise_dim: usize,
    /// State dimension `d`.
    pub state_dim: usize,
    pub horizon: f64,
    pub grid_level: u32,
    /// Truncation level of sampled Brownian paths.
    pub max_level: u32,
    /// Cap on the codebook level.
    pub level_cap: u32,
    /// Codebook size for single-size commands.
    pub n: usize,
    pub sizes: Vec<usize>,
    pub levels: Vec<u32>,
    pub samples: usize,
    pub r: f64,
    pub pool_size: Option<usize>,
    pub max_iters: usize,
    pub support_cap: usize,
    pub reference: usize,
    pub metric: PathMetric,
    pub stride: usize,
    pub xi: Vec<f64>,
    pub initial_law: Option<InitialLaw>,
    pub coefficients: Option<CoefficientSpec>,
    pub search_level: Option<u32>,
    pub budget: usize,
    pub starts: usize,
    pub output: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            alpha: 0.4,
            noise_dim: 1,
            state_dim: 1,
            horizon: 1.0,
            grid_level: 8,
            max_level: 10,
            level_cap: 4,
            n: 16,
            sizes: vec![4, 8, 16, 32, 64],
            levels: (2..=9).collect(),
            samples: 2000,
            r: 2.0,
            pool_size: None,
            max_iters: 200,
            support_cap: 1 << 16,
            reference: 128,
            metric: PathMetric::Holder,
            stride: 1,
            xi: vec![0.0],
            initial_law: None,
            coefficients: None,
            search_level: None,
            budget: 4000,
            starts: 8,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).map_err(|e| bad("<document>", e.to_string()).into())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 1.0 / 3.0 && self.alpha < 0.5) {
            return Err(bad("alpha", "must lie in (1/3, 1/2)"));
        }
        if self.noise_dim == 0 {
            return Err(bad("noise_dim", "must be positive"));
        }
        if self.state_dim == 0 {
            return Err(bad("state_dim", "must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(bad("horizon", "must be positive and finite"));
        }
        if self.grid_level > 16 {
            return Err(bad("grid_level", "must be at most 16"));
        }
        if self.grid_level < self.level_cap + 1 {
            return Err(bad("grid_level", "must exceed level_cap so codebook paths are resolved exactly"));
        }
        if self.max_level > 24 {
            return Err(bad("max_level", "must be at most 24"));
        }
        if self.max_level < self.level_cap {
            return Err(bad("max_level", "must be at least level_cap"));
        }
        if self.n == 0 {
            return Err(bad("n", "must be positive"));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(bad("sizes", "must be a non-empty list of positive sizes"));
        }
        if self.levels.iter().any(|&l| l > self.max_level) {
            return Err(bad("levels", "must not exceed max_level"));
        }
        if self.samples < 2 {
            return Err(bad("samples", "must be at least 2"));
        }
        if !(self.r >= 1.0) {
            return Err(bad("r", "must be at least 1"));
        }
        if self.stride == 0 {
            return Err(bad("stride", "must be positive"));
        }
        if self.reference == 0 {
            return Err(bad("reference", "must be positive"));
        }
        if self.xi.len() != self.state_dim {
            return Err(bad("xi", format!("must have state_dim = {} entries", self.state_dim)));
        }
        if let Some(law) = &self.initial_law {
            if law.mean.len() != self.state_dim {
                return Err(bad("initial_law.mean", format!("must have state_dim = {} entries", self.state_dim)));
            }
            if !(law.std >= 0.0) {
                return Err(bad("initial_law.std", "must be non-negative"));
            }
            if law.samples == 0 {
                return Err(bad("initial_law.samples", "must be positive"));
            }
        }
        if let Some(c) = &self.coefficients {
            let b = c.build().map_err(|e| bad("coefficients", e.to_string()))?;
            if b.state_dim() != self.state_dim {
                return Err(bad("coefficients.dim", "must equal state_dim"));
            }
            if b.noise_dim() != self.noise_dim {
                return Err(bad("coefficients.noise_dim", "must equal noise_dim"));
            }
        }
        if self.budget == 0 {
            return Err(bad("budget", "must be positive"));
        }
        if self.starts == 0 {
            return Err(bad("starts", "must be positive"));
        }
        Ok(())
    }

    pub fn require_coefficients(&self) -> Result<&CoefficientSpec, ConfigError> {
        self.coefficients.as_ref().ok_or_else(|| bad("coefficients", "required by this command"))
    }

    pub fn sampler(&self) -> roughquant::Result<BmSampler> {
        BmSampler::new(self.noise_dim, self.horizon, self.max_level, self.seed)
    }

    pub fn quant_options(&self) -> QuantOptions {
        QuantOptions {
            pool_size: self.pool_size,
            level_cap: self.level_cap,
            max_iters: self.max_iters,
            support_cap: self.support_cap,
            ..QuantOptions::default()
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        roughquant::wavelet::dyadic_grid(self.horizon, self.grid_level)
    }
}
