//! Model checkpoints: versioned JSON records of (spec, parameters, BN stats)
//! that round-trip bit-exactly, plus an optional averaging-metadata block for
//! checkpoints produced by EMA/SWA.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BnStats, Model, ParamVector};
use crate::scalar::Real;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Provenance of an averaged checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingMeta {
    /// "ema" | "swa" | "baseline"
    pub method: String,
    pub decay: Option<f64>,
    pub sampling_period: Option<usize>,
    pub update_count: usize,
    pub bn_policy: String,
    pub source_run: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: DeserializeOwned"))]
pub struct Checkpoint<F> {
    pub format_version: u32,
    pub spec: super::MlpSpec,
    pub params: Vec<F>,
    pub bn: BnStats<F>,
    pub averaging: Option<AveragingMeta>,
}

impl<F: Real + Serialize + DeserializeOwned> Checkpoint<F> {
    pub fn from_model(model: &Model<F>, averaging: Option<AveragingMeta>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: model.spec.clone(),
            params: model.params.values().to_vec(),
            bn: model.bn.clone(),
            averaging,
        }
    }

    pub fn into_model(self) -> Result<Model<F>> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::input(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        let layout = self.spec.layout();
        let params = ParamVector::from_values(layout, self.params)?;
        Ok(Model::from_parts(self.spec, params, self.bn))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&json)?)
    }
}
