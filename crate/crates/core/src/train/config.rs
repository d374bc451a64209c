use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeaError};
use crate::graph::{generate_sbm, load_jsonl_dataset, Graph, SbmConfig};
use crate::sea::{check_task, SeaConfig};

/// Where a split comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// JSONL file, one graph per line.
    Jsonl(PathBuf),
    /// Generated on the fly.
    Sbm(SbmConfig),
}

impl DataSource {
    /// Loads the graphs; relative paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<Vec<Graph>> {
        match self {
            DataSource::Jsonl(p) => match base {
                Some(b) if p.is_relative() => load_jsonl_dataset(b.join(p)),
                _ => load_jsonl_dataset(p),
            },
            DataSource::Sbm(c) => generate_sbm(c),
        }
    }
}

fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    1e-3
}
fn d_factor() -> f64 {
    0.5
}
fn d_lr_patience() -> usize {
    5
}
fn d_min_lr() -> f64 {
    1e-6
}
fn d_epochs() -> usize {
    500
}
fn d_eval_every() -> usize {
    5
}
fn d_stop_patience() -> usize {
    10
}
fn d_threshold() -> f64 {
    0.01
}

/// Training run description. Model fields sit at the top level next to the
/// optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub model: SeaConfig,
    pub train_data: DataSource,
    pub val_data: DataSource,
    pub test_data: DataSource,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_factor")]
    pub lr_reduce_factor: f64,
    /// Non-improving validation epochs before the learning rate drops.
    #[serde(default = "d_lr_patience")]
    pub lr_patience: usize,
    /// Training stops once the learning rate falls below this.
    #[serde(default = "d_min_lr")]
    pub min_lr: f64,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    /// Test-set evaluation period in epochs.
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    /// Non-improving test evaluations before stopping.
    #[serde(default = "d_stop_patience")]
    pub early_stop_patience: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Minimum share for an expert to appear in the routing report.
    #[serde(default = "d_threshold")]
    pub report_threshold: f64,
    /// Best checkpoint destination.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Per-epoch JSON log destination.
    #[serde(default)]
    pub log: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: SeaConfig, train: DataSource, val: DataSource, test: DataSource) -> Self {
        TrainConfig {
            model,
            train_data: train,
            val_data: val,
            test_data: test,
            batch_size: d_batch(),
            lr: d_lr(),
            lr_reduce_factor: d_factor(),
            lr_patience: d_lr_patience(),
            min_lr: d_min_lr(),
            max_epochs: d_epochs(),
            eval_every: d_eval_every(),
            early_stop_patience: d_stop_patience(),
            weight_decay: 0.0,
            seed: 0,
            report_threshold: d_threshold(),
            checkpoint: None,
            log: None,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(SeaError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor < 1.0) {
            return bad("lr_reduce_factor must lie in (0, 1)");
        }
        if self.lr_patience == 0 || self.eval_every == 0 || self.early_stop_patience == 0 {
            return bad("patience and evaluation periods must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Train, validation and test graphs.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
}

impl Splits {
    /// Loads all three splits and checks them against the task.
    pub fn load(config: &TrainConfig, base: Option<&Path>) -> Result<Self> {
        let s = Splits {
            train: config.train_data.load(base)?,
            val: config.val_data.load(base)?,
            test: config.test_data.load(base)?,
        };
        for split in [&s.train, &s.val, &s.test] {
            check_task(split, config.model.task)?;
        }
        Ok(s)
    }
}
