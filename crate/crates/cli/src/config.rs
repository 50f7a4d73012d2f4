use std::path::Path;

use anyhow::{bail, Context, Result};
use rpmnet_core::TrainConfig;

pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;

/// Training config file: every [`TrainConfig`] key plus `split_ratio`.
///
/// ```toml
/// epochs = 50
/// beta = 0.0
/// hidden_dims = [128, 64]
/// split_ratio = 0.8
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub split_ratio: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            split_ratio: DEFAULT_SPLIT_RATIO,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        let split_ratio = match table.remove("split_ratio") {
            None => DEFAULT_SPLIT_RATIO,
            Some(toml::Value::Float(v)) => v,
            Some(other) => bail!("split_ratio must be a float, got {other}"),
        };
        let train: TrainConfig = table.try_into()?;
        Ok(RunConfig { train, split_ratio })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                RunConfig::from_toml(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }
}
