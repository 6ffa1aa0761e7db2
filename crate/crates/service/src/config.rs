//! Service configuration: a TOML file plus environment overrides.
//!
//! | variable                   | overrides       |
//! |----------------------------|-----------------|
//! | `FIREWATCH_BIND`           | `bind`          |
//! | `FIREWATCH_PORT`           | `port`          |
//! | `FIREWATCH_LOG_PATH`       | `log_path`      |
//! | `FIREWATCH_REGISTRY_PATH`  | `registry_path` |
//! | `FIREWATCH_RULEBASE_PATH`  | `rulebase_path` |
//!
//! Relative paths in the file resolve against the file's directory;
//! relative paths from the environment resolve against the working
//! directory.

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::auth::UserConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid {key}: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "defaults::bind")]
    pub bind: IpAddr,
    #[serde(default = "defaults::port")]
    pub port: u16,
    pub log_path: PathBuf,
    pub registry_path: PathBuf,
    #[serde(default)]
    pub rulebase_path: Option<PathBuf>,
    #[serde(default = "defaults::token_ttl")]
    pub token_ttl_seconds: u64,
    /// `fsync` after every committed batch.
    #[serde(default = "defaults::fsync")]
    pub fsync: bool,
    /// Days of package ids kept in the replay ledger.
    #[serde(default = "defaults::retention")]
    pub replay_retention_days: u32,
    #[serde(default)]
    pub users: Vec<UserConfig>,
}

mod defaults {
    use std::net::{IpAddr, Ipv4Addr};

    pub fn bind() -> IpAddr {
        IpAddr::V4(Ipv4Addr::LOCALHOST)
    }
    pub fn port() -> u16 {
        8080
    }
    pub fn token_ttl() -> u64 {
        8 * 3600
    }
    pub fn fsync() -> bool {
        true
    }
    pub fn retention() -> u32 {
        7
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        cfg.log_path = dir.join(&cfg.log_path);
        cfg.registry_path = dir.join(&cfg.registry_path);
        cfg.rulebase_path = cfg.rulebase_path.map(|p| dir.join(p));
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.token_ttl_seconds == 0 {
            return Err(ConfigError::Invalid {
                key: "token_ttl_seconds",
                message: "must be positive".into(),
            });
        }
        let mut names = std::collections::BTreeSet::new();
        for u in &self.users {
            if !names.insert(&u.username) {
                return Err(ConfigError::Invalid {
                    key: "users",
                    message: format!("duplicate user {}", u.username),
                });
            }
            crate::auth::parse_password_hash(&u.password_hash).map_err(|message| {
                ConfigError::Invalid {
                    key: "users",
                    message: format!("{}: {message}", u.username),
                }
            })?;
        }
        Ok(())
    }

    /// Applies `FIREWATCH_*` overrides read through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var("FIREWATCH_BIND") {
            self.bind = v.parse().map_err(|e| ConfigError::Invalid {
                key: "FIREWATCH_BIND",
                message: format!("{e}"),
            })?;
        }
        if let Some(v) = var("FIREWATCH_PORT") {
            self.port = v.parse().map_err(|e| ConfigError::Invalid {
                key: "FIREWATCH_PORT",
                message: format!("{e}"),
            })?;
        }
        if let Some(v) = var("FIREWATCH_LOG_PATH") {
            self.log_path = v.into();
        }
        if let Some(v) = var("FIREWATCH_REGISTRY_PATH") {
            self.registry_path = v.into();
        }
        if let Some(v) = var("FIREWATCH_RULEBASE_PATH") {
            self.rulebase_path = Some(v.into());
        }
        Ok(())
    }
}
