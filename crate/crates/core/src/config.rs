//! Platform configuration file.
//!
//! TOML with top-level keys `repository`, `bed_capacity` and
//! `antibiotic_classes`, plus `[linkage]`, `[server]`, one `[[sources]]` table
//! per source and optional `[profiles.<name>]` mapping profiles. Relative paths
//! are resolved against the directory holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::LinkagePolicy;
use crate::extract::{builtin_profiles, MappingProfile, SourceConfig};
use crate::kpi::KpiContext;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

fn default_capacity() -> u32 {
    100
}

fn default_antibiotics() -> Vec<String> {
    vec!["antibiotic".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    pub repository: PathBuf,
    #[serde(default = "default_capacity")]
    pub bed_capacity: u32,
    #[serde(default = "default_antibiotics")]
    pub antibiotic_classes: Vec<String>,
    #[serde(default)]
    pub linkage: LinkagePolicy,
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub profiles: BTreeMap<String, MappingProfile>,
}

impl PlatformConfig {
    /// Parses config text; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PlatformConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.repository = base.join(&cfg.repository);
        for s in &mut cfg.sources {
            s.path = base.join(&s.path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bed_capacity < 1 {
            return Err(ConfigError::Invalid("bed_capacity must be at least 1".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.sources {
            if s.source_id.is_empty() {
                return Err(ConfigError::Invalid("source_id must be non-empty".into()));
            }
            if !ids.insert(s.source_id.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate source_id {:?}",
                    s.source_id
                )));
            }
            self.profile(&s.mapping_profile)?;
        }
        Ok(())
    }

    /// Resolves a profile name; config profiles shadow the built-in ones.
    pub fn profile(&self, name: &str) -> Result<MappingProfile, ConfigError> {
        self.profiles
            .get(name)
            .cloned()
            .or_else(|| builtin_profiles().remove(name))
            .ok_or_else(|| ConfigError::Invalid(format!("unknown mapping profile {name:?}")))
    }

    /// Every source paired with its resolved profile.
    pub fn resolved_sources(&self) -> Result<Vec<(SourceConfig, MappingProfile)>, ConfigError> {
        self.sources
            .iter()
            .map(|s| Ok((s.clone(), self.profile(&s.mapping_profile)?)))
            .collect()
    }

    pub fn kpi_context(&self) -> KpiContext {
        KpiContext {
            bed_capacity: self.bed_capacity,
            antibiotic_classes: self.antibiotic_classes.clone(),
        }
    }
}
