//! Per-epoch run records and early-stopping verdicts, persisted as
//! line-delimited JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub val_acc: f64,
    pub val_loss: f64,
}

/// Train accuracy split into clean and (when noise is present) noisy labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainAccSplit {
    pub clean: f64,
    pub noisy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEntry {
    pub epoch: usize,
    /// Learning rate at the first optimizer step of the epoch.
    pub lr: f64,
    pub baseline: ModelEval,
    /// One entry per EMA decay, in bank order.
    pub ema: Vec<ModelEval>,
    pub swa: Option<ModelEval>,
    pub train_baseline: Option<TrainAccSplit>,
    pub train_ema: Option<Vec<TrainAccSplit>>,
    /// Clean-test accuracy curves; recorded only when the experiment asks
    /// for them (analysis output, never used for model selection).
    pub test_baseline: Option<f64>,
    pub test_ema: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingVerdict {
    pub epoch: usize,
    pub decay_index: usize,
    pub decay: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs: Vec<EpochEntry>,
    pub best_val_acc: Option<StoppingVerdict>,
    pub lowest_val_loss: Option<StoppingVerdict>,
    /// Divergence diagnostic; `None` for a completed run.
    pub failed: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RecordLine {
    Meta {
        seed: u64,
        failed: Option<String>,
    },
    Epoch(EpochEntry),
    Verdicts {
        best_val_acc: Option<StoppingVerdict>,
        lowest_val_loss: Option<StoppingVerdict>,
    },
}

impl RunRecord {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let meta = RecordLine::Meta {
            seed: self.seed,
            failed: self.failed.clone(),
        };
        out.push_str(&serde_json::to_string(&meta)?);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&RecordLine::Epoch(e.clone()))?);
            out.push('\n');
        }
        let verdicts = RecordLine::Verdicts {
            best_val_acc: self.best_val_acc.clone(),
            lowest_val_loss: self.lowest_val_loss.clone(),
        };
        out.push_str(&serde_json::to_string(&verdicts)?);
        out.push('\n');
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut record = RunRecord::default();
        let mut saw_meta = false;
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            match serde_json::from_str::<RecordLine>(line)? {
                RecordLine::Meta { seed, failed } => {
                    record.seed = seed;
                    record.failed = failed;
                    saw_meta = true;
                }
                RecordLine::Epoch(e) => record.epochs.push(e),
                RecordLine::Verdicts {
                    best_val_acc,
                    lowest_val_loss,
                } => {
                    record.best_val_acc = best_val_acc;
                    record.lowest_val_loss = lowest_val_loss;
                }
            }
        }
        if !saw_meta {
            return Err(Error::input("run record missing meta line"));
        }
        Ok(record)
    }
}
