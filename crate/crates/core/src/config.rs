//! Run configuration: published defaults, JSON loading, and validation
//! against the partition-adjustment bounds.

use crate::geometry::{self, GeometryError};
use crate::model::TrainConfig;
use crate::refinement::CmMetric;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable overriding the configured seed.
pub const SEED_ENV_VAR: &str = "SALPN_SEED";

/// Errors raised while loading or validating a configuration.
#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Json(serde_json::Error),
    Geometry(GeometryError),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "config io error: {e}"),
            ConfigError::Json(e) => write!(f, "config parse error: {e}"),
            ConfigError::Geometry(e) => write!(f, "config invalid: {e}"),
            ConfigError::Invalid(msg) => write!(f, "config invalid: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Input/output locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    /// Dataset directory holding `train.jsonl` / `test.jsonl`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Directory for reports, checkpoints and plots.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_n_parts() -> usize {
    4
}
fn default_alpha() -> f64 {
    14.0
}
fn default_delta() -> f32 {
    0.5
}
fn default_cm_metric() -> CmMetric {
    CmMetric::Chebyshev
}
fn default_use_cm() -> bool {
    true
}
fn default_h_sat() -> f64 {
    189.75
}
fn default_map_size() -> usize {
    128
}
fn default_image_size() -> usize {
    512
}
fn default_h_drone_min() -> f64 {
    18.5
}
fn default_h_drone_max() -> f64 {
    361.0
}
fn default_channels() -> usize {
    32
}
fn default_d_mid() -> usize {
    16
}
fn default_lambda_aug() -> f64 {
    crate::augment::DEFAULT_LAMBDA_AUG
}

/// Full run configuration with published defaults: four partitions,
/// adjustment factor 14.0, threshold 0.5, Chebyshev coordinate map,
/// satellite height 189.75 m (the midpoint of the drone height range) and
/// 512x512 inputs. The height range defaults span the augmented extremes so
/// the default alpha is admissible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub n_parts: usize,
    pub alpha: f64,
    pub delta: f32,
    pub cm_metric: CmMetric,
    /// Ablation switch: without the coordinate map the heatmap is the
    /// normalized activation alone.
    pub use_cm: bool,
    pub h_sat: f64,
    pub map_size: usize,
    pub image_size: usize,
    pub seed: u64,
    pub h_drone_min: f64,
    pub h_drone_max: f64,
    /// Output channels of the handcrafted feature extractor.
    pub channels: usize,
    /// Descriptor width of each classifier head.
    pub d_mid: usize,
    pub dropout: f64,
    pub lambda_aug: f64,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_parts: default_n_parts(),
            alpha: default_alpha(),
            delta: default_delta(),
            cm_metric: default_cm_metric(),
            use_cm: default_use_cm(),
            h_sat: default_h_sat(),
            map_size: default_map_size(),
            image_size: default_image_size(),
            seed: 0,
            h_drone_min: default_h_drone_min(),
            h_drone_max: default_h_drone_max(),
            channels: default_channels(),
            d_mid: default_d_mid(),
            dropout: 0.0,
            lambda_aug: default_lambda_aug(),
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Feature-grid side: the extractor output that `upsample4` lifts to
    /// `map_size`.
    pub fn grid(&self) -> usize {
        self.map_size / 4
    }

    /// Parse a JSON config file and validate it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
        let config: RunConfig = serde_json::from_str(&text).map_err(ConfigError::Json)?;
        config.validate()?;
        Ok(config)
    }

    /// Apply the `SALPN_SEED` override if set.
    pub fn apply_env_seed(&mut self) -> Result<(), ConfigError> {
        if let Ok(value) = std::env::var(SEED_ENV_VAR) {
            self.seed = value
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV_VAR} must be an integer, got '{value}'")))?;
        }
        Ok(())
    }

    /// Check geometric consistency and the alpha admissibility bounds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.map_size % 4 != 0 || self.map_size == 0 {
            return Err(ConfigError::Invalid(format!(
                "map_size {} must be a positive multiple of 4",
                self.map_size
            )));
        }
        if self.image_size == 0 || self.image_size % self.grid() != 0 {
            return Err(ConfigError::Invalid(format!(
                "image_size {} must be a positive multiple of the feature grid {}",
                self.image_size,
                self.grid()
            )));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(ConfigError::Invalid(format!("delta {} outside [0, 1]", self.delta)));
        }
        if self.channels == 0 || self.d_mid == 0 {
            return Err(ConfigError::Invalid("channels and d_mid must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.lambda_aug < 0.0 {
            return Err(ConfigError::Invalid("lambda_aug must be non-negative".into()));
        }
        self.train.validate().map_err(ConfigError::Invalid)?;
        let bounds = geometry::alpha_bounds(
            self.h_sat,
            self.h_drone_max,
            self.h_drone_min,
            self.n_parts,
            self.map_size,
        )
        .map_err(ConfigError::Geometry)?;
        if !bounds.admits(self.alpha) {
            return Err(ConfigError::Geometry(GeometryError::AlphaOutOfBounds {
                alpha: self.alpha,
                shrink_bound: bounds.shrink,
                expand_bound: bounds.expand,
            }));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_settings_and_validate() {
        let config = RunConfig::default();
        assert_eq!(config.n_parts, 4);
        assert_eq!(config.alpha, 14.0);
        assert_eq!(config.delta, 0.5);
        assert_eq!(config.cm_metric, CmMetric::Chebyshev);
        assert_eq!(config.h_sat, 189.75);
        assert_eq!(config.image_size, 512);
        assert_eq!(config.grid(), 32);
        config.validate().unwrap();
    }

    #[test]
    fn alpha_above_bound_is_rejected_citing_both_bounds() {
        let config = RunConfig { alpha: 17.0, ..RunConfig::default() };
        let err = config.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("16.62"), "{msg}");
        assert!(msg.contains("53.19"), "{msg}");
    }

    #[test]
    fn partial_json_files_fill_in_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"alpha": 7.0, "image_size": 64, "map_size": 64}"#).unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.alpha, 7.0);
        assert_eq!(config.image_size, 64);
        assert_eq!(config.n_parts, 4);
    }

    #[test]
    fn geometric_consistency_is_enforced() {
        let bad = RunConfig { map_size: 130, ..RunConfig::default() };
        assert!(bad.validate().is_err());
        let bad = RunConfig { image_size: 100, ..RunConfig::default() };
        assert!(bad.validate().is_err());
        let bad = RunConfig { delta: 1.5, ..RunConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = RunConfig { seed: 42, alpha: 10.0, ..RunConfig::default() };
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }
}
