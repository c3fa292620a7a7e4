//! Runtime configuration, fixed at bus startup.
//!
//! A plain `key=value` text file selects the MAC algorithm, freshness window,
//! chain depth limit, payload cap, and transport; `#` starts a comment.
//! Command-line flags override file values.

use std::path::Path;

use thiserror::Error;

use crate::crypto::MacAlgorithm;
use crate::types::{DEFAULT_MAX_CHAIN_DEPTH, DEFAULT_MAX_PAYLOAD};

pub const DEFAULT_FRESHNESS_MS: u64 = 500;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected key=value, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {value:?}")]
    BadValue { line: usize, key: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Memory,
    Tcp,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub algorithm: MacAlgorithm,
    pub max_chain_depth: usize,
    pub max_payload: usize,
    pub freshness_ms: u64,
    pub transport: TransportKind,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            algorithm: MacAlgorithm::HmacSha1,
            max_chain_depth: DEFAULT_MAX_CHAIN_DEPTH,
            max_payload: DEFAULT_MAX_PAYLOAD,
            freshness_ms: DEFAULT_FRESHNESS_MS,
            transport: TransportKind::Memory,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed { line, text: trimmed.to_string() })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            };
            match key {
                "mac_algorithm" => {
                    config.algorithm = MacAlgorithm::parse(value).ok_or_else(bad)?;
                }
                "max_chain_depth" => {
                    config.max_chain_depth = value.parse().map_err(|_| bad())?;
                }
                "max_payload" => {
                    config.max_payload = value.parse().map_err(|_| bad())?;
                }
                "freshness_ms" => {
                    config.freshness_ms = value.parse().map_err(|_| bad())?;
                }
                "transport" => {
                    config.transport = match value {
                        "memory" => TransportKind::Memory,
                        "tcp" => TransportKind::Tcp,
                        _ => return Err(bad()),
                    };
                }
                _ => {
                    return Err(ConfigError::UnknownKey { line, key: key.to_string() });
                }
            }
        }
        Ok(config)
    }
}
