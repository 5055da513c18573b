//! Experiment configuration: TOML files with strict key checking, key=value
//! overrides, and a fully resolved echo written next to every run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub run: RunConfig,
}

fn default_name() -> String {
    "experiment".to_string()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| {
            Error::Config(e.to_string())
        })?;
        cfg.run.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    /// Complete config with every default filled in; reproduces the run with
    /// no external defaults.
    pub fn resolved_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Applies a `dotted.path=value` override onto the raw TOML document. The
/// value is parsed as TOML when possible and treated as a string otherwise.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{spec}' is not key=value")))?;
    let parsed: toml::Value = match format!("x = {raw_value}").parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("x").unwrap(),
        _ => toml::Value::String(raw_value.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    let mut cursor = root;
    for key in &keys[..keys.len() - 1] {
        cursor = cursor
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override path '{path}' crosses a non-table")))?
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    cursor
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("override path '{path}' crosses a non-table")))?
        .insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

/// Default desk-scale configuration: 20-dimensional 5-class Gaussian blobs,
/// MLP 20-128-128-5 with BN, batch 128, 60 epochs with 3 warmup epochs.
pub fn default_config_toml() -> &'static str {
    r#"name = "base"
seeds = [1, 2, 3]

[run]
n_test = 2000
hidden_widths = [128, 128]
batchnorm = true
momentum = 0.9
weight_decay = 1e-4
nesterov = true
batch_size = 128
ema_decays = [0.968, 0.984, 0.992, 0.996, 0.998]
ema_period = 16
ema_warmup = true
swa_enabled = true
bn_policy = "batch_ema"
split_fraction = 0.8

[run.dataset]
kind = "gaussian_blobs"
n_samples = 10000
n_features = 20
n_classes = 5
class_separation = 0.75
seed = 2024

[run.schedule]
kind = "warmup_cosine"
base_lr = 0.1
warmup_epochs = 3
total_epochs = 60
"#
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses() {
        let cfg = ExperimentConfig::from_toml_str(default_config_toml(), &[]).unwrap();
        assert_eq!(cfg.run.ema_period, 16);
        assert_eq!(cfg.run.ema_decays.len(), 5);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = "bogus_key = 1\n".to_string() + default_config_toml();
        let err = ExperimentConfig::from_toml_str(&bad, &[]).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn missing_dataset_names_the_key() {
        let bad = r#"name = "x"
[run]
[run.schedule]
kind = "constant"
base_lr = 0.1
total_epochs = 5
"#;
        let err = ExperimentConfig::from_toml_str(bad, &[]).unwrap_err();
        assert!(err.to_string().contains("dataset"), "{err}");
    }

    #[test]
    fn overrides_apply_by_path() {
        let cfg = ExperimentConfig::from_toml_str(
            default_config_toml(),
            &[
                "run.ema_decays=[0.0]".to_string(),
                "run.schedule.total_epochs=10".to_string(),
                "name=\"other\"".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.run.ema_decays, vec![0.0]);
        assert_eq!(cfg.run.schedule.total_epochs, 10);
        assert_eq!(cfg.name, "other");
    }

    #[test]
    fn resolved_toml_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(default_config_toml(), &[]).unwrap();
        let echoed = cfg.resolved_toml().unwrap();
        let reparsed = ExperimentConfig::from_toml_str(&echoed, &[]).unwrap();
        assert_eq!(cfg, reparsed);
    }
}
