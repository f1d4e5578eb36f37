//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use frcr::datasets::{default_pairing, DatasetKind};
use frcr::harness::{StrategyConfig, TrainConfig};
use frcr::metrics::NoiseProbe;
use frcr::nn::Architecture;
use frcr::{Error, Result};

/// A strategy given either by name (default hyperparameters) or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategySpec {
    Name(String),
    Full(StrategyConfig),
}

impl StrategySpec {
    pub fn resolve(&self) -> Result<StrategyConfig> {
        match self {
            StrategySpec::Name(name) => name.parse(),
            StrategySpec::Full(s) => {
                s.validate()?;
                Ok(*s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ArchOverride {
    pub hidden1: Option<usize>,
    pub hidden2: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub noise_sweep: bool,
    pub drift_check: bool,
    pub correlations: bool,
    pub snapshots: bool,
    pub noise: NoiseProbe,
    /// Step size of the drift probe; the run's lr when absent.
    pub drift_lr: Option<f64>,
    /// Strategy whose runs feed the drift probe.
    pub drift_strategy: String,
    /// Original class id for the correlation analysis.
    pub category: u8,
    pub correlation_samples: usize,
    /// 1-based task whose predictions are snapshotted after every later task.
    pub snapshot_task: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            noise_sweep: false,
            drift_check: false,
            correlations: false,
            snapshots: false,
            noise: NoiseProbe::default(),
            drift_lr: None,
            drift_strategy: "frcr".into(),
            category: 2,
            correlation_samples: 100,
            snapshot_task: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<StrategySpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub arch: ArchOverride,
    /// Defaults to 5 for MNIST and Fashion-MNIST, 10 for CIFAR-10.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub task_order: Option<Vec<usize>>,
    #[serde(default = "default_pairing")]
    pub pairing: Vec<(u8, u8)>,
    #[serde(default = "yes")]
    pub checkpoints: bool,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn all_strategies() -> Vec<StrategySpec> {
    StrategyConfig::NAMES.iter().map(|n| StrategySpec::Name(n.to_string())).collect()
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_lr() -> f64 {
    0.05
}
fn default_batch() -> usize {
    64
}
fn yes() -> bool {
    true
}
fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetKind) -> Self {
        serde_json::from_value(serde_json::json!({ "dataset": dataset })).expect("defaults deserialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        let names: Vec<_> = self.resolved_strategies()?.iter().map(|s| s.name()).collect();
        if let Some(dup) = names.iter().enumerate().find(|(i, n)| names[..*i].contains(n)) {
            return Err(Error::Config(format!("strategy {} listed twice", dup.1)));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.arch().validate()?;
        self.train(0).validate(self.pairing.len())?;
        Ok(())
    }

    pub fn resolved_strategies(&self) -> Result<Vec<StrategyConfig>> {
        self.strategies.iter().map(StrategySpec::resolve).collect()
    }

    pub fn arch(&self) -> Architecture {
        let base = match self.dataset {
            DatasetKind::Cifar10 => Architecture::cifar10(),
            _ => Architecture::mnist(),
        };
        Architecture::new(
            base.input_dim,
            self.arch.hidden1.unwrap_or(base.hidden1),
            self.arch.hidden2.unwrap_or(base.hidden2),
        )
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.dataset {
            DatasetKind::Cifar10 => 10,
            _ => 5,
        })
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(),
            lr: self.lr,
            batch_size: self.batch_size,
            seed,
            task_order: self.task_order.clone(),
        }
    }
}
