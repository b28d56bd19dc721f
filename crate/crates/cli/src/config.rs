//! TOML pipeline configuration.
//!
//! ```toml
//! seed = 2022
//! k_folds = 5
//! budget = 10000.0
//! budget_grid = [2000.0, 5000.0, 10000.0, 20000.0, 40000.0]
//! variants = ["full", "direct_only"]
//!
//! [data]
//! world = "standard"
//! n_customers = 20000
//!
//! [model]
//! hidden_units = [64, 64, 32, 16]
//! learning_rate = 1e-3
//! ```
//!
//! Every key is optional; `[model]` defaults are the reference training
//! settings. Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use cdee::datagen::GenConfig;
use cdee::losses::TweedieIndex;
use cdee::model::{CdeeConfig, Variant};
use serde::{Deserialize, Serialize};

/// Budget per customer used when `budget` is not set.
pub const DEFAULT_BUDGET_PER_CUSTOMER: f64 = 0.5;
/// Budget grid per customer used when `budget_grid` is not set.
pub const DEFAULT_GRID_PER_CUSTOMER: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum World {
    Standard,
    /// Direct and enduring responses pull in opposite directions.
    Decorrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub world: World,
    pub n_customers: usize,
    /// Overrides the world's Tweedie dispersion.
    pub phi: Option<f64>,
    /// Overrides the world's Tweedie index.
    pub rho: Option<TweedieIndex>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            world: World::Standard,
            n_customers: 20_000,
            phi: None,
            rho: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub k_folds: usize,
    pub budget: Option<f64>,
    pub budget_grid: Option<Vec<f64>>,
    pub variants: Vec<Variant>,
    pub data: DataConfig,
    pub model: CdeeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 2022,
            k_folds: 5,
            budget: None,
            budget_grid: None,
            variants: Variant::ALL.to_vec(),
            data: DataConfig::default(),
            model: CdeeConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn gen_config(&self) -> GenConfig {
        let mut g = match self.data.world {
            World::Standard => GenConfig::standard(self.data.n_customers, self.seed),
            World::Decorrelated => GenConfig::decorrelated(self.data.n_customers, self.seed),
        };
        if let Some(phi) = self.data.phi {
            g.phi = phi;
        }
        if let Some(rho) = self.data.rho {
            g.rho = rho;
        }
        g
    }

    /// Model settings for `variant`, seeded from the pipeline seed.
    pub fn model_config(&self, variant: Variant) -> CdeeConfig {
        CdeeConfig {
            variant,
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn budget_for(&self, n_customers: usize) -> f64 {
        self.budget.unwrap_or(DEFAULT_BUDGET_PER_CUSTOMER * n_customers as f64)
    }

    pub fn grid_for(&self, n_customers: usize) -> Vec<f64> {
        self.budget_grid
            .clone()
            .unwrap_or_else(|| DEFAULT_GRID_PER_CUSTOMER.iter().map(|k| k * n_customers as f64).collect())
    }

    /// Sets `seed` everywhere it propagates.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    /// 1-based.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("config")?;
        if let Some(line) = self.line {
            write!(f, " line {line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, " key `{key}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]` (top level when `None`).
fn find_key_line(src: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            continue;
        }
        if current.as_deref() != section {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    None
}

fn key_error(src: &str, section: Option<&str>, key: &str, message: String) -> ConfigError {
    let full = match section {
        Some(s) => format!("{s}.{key}"),
        None => key.to_string(),
    };
    ConfigError {
        line: find_key_line(src, section, key),
        key: Some(full),
        message,
    }
}

const MODEL_KEYS: [&str; 15] = [
    "hidden_units",
    "incentive_count",
    "embedding_dim",
    "head_depths",
    "loss_weights",
    "learning_rate",
    "batch_size",
    "patience",
    "lr_plateau_epochs",
    "lr_decay",
    "dropout",
    "max_epochs",
    "validation_fraction",
    "variant",
    "seed",
];

fn model_key_for(message: &str) -> &'static str {
    if message.starts_with("head depths") {
        return "head_depths";
    }
    if message.starts_with("loss weights") || message.contains("loss weight") {
        return "loss_weights";
    }
    if message.contains("patience") {
        return "patience";
    }
    MODEL_KEYS.iter().copied().find(|k| message.contains(k)).unwrap_or("hidden_units")
}

pub fn parse_config_str(src: &str) -> Result<PipelineConfig, ConfigError> {
    let cfg: PipelineConfig = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(src, s.start));
        let key = line
            .and_then(|l| src.lines().nth(l - 1))
            .and_then(|text| text.split_once('='))
            .map(|(k, _)| k.trim().to_string());
        ConfigError {
            key,
            line,
            message: e.message().to_string(),
        }
    })?;
    if cfg.k_folds < 2 {
        return Err(key_error(src, None, "k_folds", format!("{} must be at least 2", cfg.k_folds)));
    }
    if let Some(b) = cfg.budget {
        if !(b >= 0.0) {
            return Err(key_error(src, None, "budget", format!("{b} must be nonnegative")));
        }
    }
    if let Some(grid) = &cfg.budget_grid {
        if grid.is_empty() || grid.iter().any(|b| !(*b >= 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(key_error(src, None, "budget_grid", "must be nonempty, nonnegative and strictly increasing".into()));
        }
    }
    if cfg.variants.is_empty() {
        return Err(key_error(src, None, "variants", "at least one variant is required".into()));
    }
    if cfg.data.n_customers == 0 {
        return Err(key_error(src, Some("data"), "n_customers", "must be positive".into()));
    }
    if let Some(phi) = cfg.data.phi {
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(key_error(src, Some("data"), "phi", format!("{phi} must be positive")));
        }
    }
    let incentives = cfg.gen_config().incentives.len();
    if cfg.model.incentive_count != incentives {
        return Err(key_error(
            src,
            Some("model"),
            "incentive_count",
            format!("{} does not match the world's {incentives} incentives", cfg.model.incentive_count),
        ));
    }
    for &v in &cfg.variants {
        if let Err(e) = cfg.model_config(v).validate() {
            let msg = e.to_string();
            return Err(key_error(src, Some("model"), model_key_for(&msg), msg));
        }
    }
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
        key: None,
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config_str(&src)
}
