use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::ServiceError;

pub const PORT_ENV: &str = "FUSELENS_PORT";
pub const DATA_DIR_ENV: &str = "FUSELENS_DATA_DIR";

/// Service settings, read from a TOML file with environment overrides for
/// the port and the data directory.
///
/// ```toml
/// host = "127.0.0.1"
/// port = 8080
/// data_dir = "data"       # manifest.txt and <Model>.ckpt files
/// model_seed = 0
///
/// [synthetic]             # used when data_dir has no manifest.txt
/// resolution = 128
/// count = 4
/// seed = 0
/// ```
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub host: String,
    pub port: u16,
    pub data_dir: Option<PathBuf>,
    pub model_seed: u64,
    pub synthetic: SyntheticConfig,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub resolution: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: None,
            model_seed: 0,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            count: 4,
            seed: 0,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Reads `path` (defaults when `None`), then applies the environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p).map_err(|e| {
                ServiceError::Config(format!("{}: {e}", p.display()))
            })?)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(port) = get(PORT_ENV) {
            self.port = port
                .parse()
                .map_err(|_| ServiceError::Config(format!("{PORT_ENV}={port:?} is not a port")))?;
        }
        if let Some(dir) = get(DATA_DIR_ENV) {
            self.data_dir = Some(dir.into());
        }
        Ok(())
    }

    pub fn addr(&self) -> Result<SocketAddr, ServiceError> {
        format!("{}:{}", self.host, self.port)
            .parse()
            .map_err(|_| ServiceError::Config(format!("bad listen address {}:{}", self.host, self.port)))
    }
}
