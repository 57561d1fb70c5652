//! Application configuration file (UTF-8 JSON).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::CostConfig;
use crate::gateway::{BackendConfig, BackendKind, Gateway};
use crate::icvl::LearnPolicy;
use crate::oracle::CensusConfig;
use crate::pose::OverlayParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseDefaults {
    /// Gaussian width in heatmap pixels for rendered heatmaps.
    pub sigma: f64,
    pub overlay: OverlayParams,
}

impl Default for PoseDefaults {
    fn default() -> Self {
        Self { sigma: 2.0, overlay: OverlayParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub backends: Vec<BackendConfig>,
    pub pose: PoseDefaults,
    pub census: CensusConfig,
    pub cost: CostConfig,
    pub learn: LearnPolicy,
    /// Directory with template overrides; built-in templates otherwise.
    pub templates_dir: Option<PathBuf>,
    pub runs_dir: PathBuf,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            backends: vec![BackendConfig::mock()],
            pose: PoseDefaults::default(),
            census: CensusConfig::default(),
            cost: CostConfig { overhead_per_infer: 10, ..Default::default() },
            learn: LearnPolicy::default(),
            templates_dir: None,
            runs_dir: PathBuf::from("runs"),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg: AppConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        cfg.validate().map_err(ConfigError::Invalid)?;
        if cfg.runs_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.runs_dir = dir.join(&cfg.runs_dir);
            }
        }
        if let Some(t) = cfg.templates_dir.as_mut().filter(|t| t.is_relative()) {
            if let Some(dir) = path.parent() {
                *t = dir.join(&*t);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.census.validate()?;
        self.pose.overlay.validate().map_err(|e| e.to_string())?;
        if self.pose.sigma.is_nan() || self.pose.sigma <= 0.0 {
            return Err("pose.sigma must be positive".into());
        }
        self.learn.validate().map_err(|e| e.to_string())?;
        let mut ids: Vec<&str> = self.backends.iter().map(|b| b.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(format!("duplicate backend id {}", w[0]));
        }
        Ok(())
    }

    /// Backend by id. The id `mock` always resolves, to the configured mock
    /// or a default one.
    pub fn backend(&self, id: &str) -> Option<BackendConfig> {
        let mut cfg = self.backends.iter().find(|b| b.id == id).cloned();
        if cfg.is_none() && id == "mock" {
            cfg = Some(BackendConfig::mock());
        }
        let mut cfg = cfg?;
        if cfg.kind == BackendKind::Mock {
            cfg.mock.census = self.census.clone();
        }
        Some(cfg)
    }

    pub fn gateway(&self, id: &str) -> Option<Gateway> {
        self.backend(id).map(Gateway::from_config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = AppConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: AppConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg: AppConfig = serde_json::from_str(r#"{"census": {"conf_threshold": 0.5}}"#).unwrap();
        assert_eq!(cfg.census.conf_threshold, 0.5);
        assert_eq!(cfg.pose.sigma, 2.0);
        assert_eq!(cfg.backend("mock").unwrap().mock.census.conf_threshold, 0.5);
        assert!(cfg.backend("nope").is_none());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let cfg = AppConfig { backends: vec![BackendConfig::mock(), BackendConfig::mock()], ..Default::default() };
        assert!(cfg.validate().unwrap_err().contains("duplicate"));
    }
}
