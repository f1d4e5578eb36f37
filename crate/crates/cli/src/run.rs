//! `frcr run`: strategies × seeds in parallel, then the summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use frcr::datasets::{is_present, load_raw, TaskDataset};
use frcr::harness::{run_sequence_observed, RunObserver, StrategyConfig};
use frcr::metrics::mean_std;
use frcr::nn::{Checkpoint, MlpModel};
use frcr::{Error, Result};

use crate::config::ExperimentConfig;

pub fn run_dir(out_dir: &Path, dataset: &str, strategy: &str, seed: u64) -> PathBuf {
    out_dir.join(dataset).join(strategy).join(seed.to_string())
}

/// `checkpoints/after_task_<t>.json`, `t` 1-based.
pub fn checkpoint_path(run_dir: &Path, task: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("after_task_{task}.json"))
}

struct CheckpointWriter {
    dir: PathBuf,
    seed: u64,
    enabled: bool,
    written: Vec<String>,
}

impl RunObserver for CheckpointWriter {
    fn task_finished(&mut self, position: usize, model: &MlpModel, _: &[usize]) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        let path = checkpoint_path(&self.dir, position + 1);
        Checkpoint::capture(model, self.seed, position).save(&path)?;
        self.written.push(format!("checkpoints/after_task_{}.json", position + 1));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub config: StrategyConfig,
    pub acc_mean: Option<f64>,
    pub acc_std: Option<f64>,
    pub amf_mean: Option<f64>,
    pub amf_std: Option<f64>,
    pub runs: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub strategies: Vec<StrategySummary>,
}

/// Contents of `summary.json`, keyed by dataset name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub datasets: BTreeMap<String, DatasetSummary>,
}

impl Summary {
    pub fn path(out_dir: &Path) -> PathBuf {
        out_dir.join("summary.json")
    }

    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = Self::path(out_dir);
        let text = fs::read_to_string(&path).map_err(|e| Error::State(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir)?;
        fs::write(Self::path(out_dir), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn summarize(strategy: StrategyConfig, runs: Vec<SeedResult>) -> StrategySummary {
    let stat = |vals: Vec<f64>| {
        if vals.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&vals);
            (Some(m), Some(s))
        }
    };
    let (acc_mean, acc_std) = stat(runs.iter().filter_map(|r| r.acc).collect());
    let (amf_mean, amf_std) = stat(runs.iter().filter_map(|r| r.amf).collect());
    StrategySummary {
        strategy: strategy.name().to_string(),
        config: strategy,
        acc_mean,
        acc_std,
        amf_mean,
        amf_std,
        runs,
    }
}

pub fn load_tasks(config: &ExperimentConfig) -> Result<Vec<TaskDataset>> {
    if !is_present(config.dataset, &config.data_dir) {
        return Err(Error::State(format!(
            "{} files not found under {}; run `frcr fetch --dataset {}` first",
            config.dataset,
            config.dataset.dir(&config.data_dir).display(),
            config.dataset
        )));
    }
    load_raw(config.dataset, &config.data_dir)?.splits(&config.pairing)
}

fn one_run(
    config: &ExperimentConfig,
    tasks: &[TaskDataset],
    strategy: &StrategyConfig,
    seed: u64,
) -> Result<(f64, Option<f64>)> {
    let dataset = config.dataset.name();
    let dir = run_dir(&config.out_dir, dataset, strategy.name(), seed);
    let mut writer = CheckpointWriter {
        dir: dir.clone(),
        seed,
        enabled: config.checkpoints,
        written: Vec::new(),
    };
    let mut record = run_sequence_observed(tasks, strategy, &config.train(seed), config.arch(), &mut writer)?;
    record.dataset = Some(dataset.to_string());
    record.artifacts = writer.written;
    record.write(&dir)?;
    Ok((record.acc, record.amf))
}

/// Runs every (strategy, seed) pair and merges the dataset's entry into
/// `summary.json`. Returns the summary and whether any run failed.
pub fn cmd_run(config: &ExperimentConfig) -> Result<(Summary, bool)> {
    config.validate()?;
    let strategies = config.resolved_strategies()?;
    let tasks = load_tasks(config)?;
    let dataset_dir = config.out_dir.join(config.dataset.name());
    fs::create_dir_all(&dataset_dir)?;
    fs::write(dataset_dir.join("experiment.json"), serde_json::to_string_pretty(config)? + "\n")?;

    let jobs: Vec<(usize, u64)> = (0..strategies.len())
        .flat_map(|s| config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let workers = config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;

    let results: Vec<SeedResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, seed)| {
                let strategy = &strategies[s];
                let started = Instant::now();
                let outcome = one_run(config, &tasks, strategy, seed);
                let elapsed = started.elapsed().as_secs_f64();
                match outcome {
                    Ok((acc, amf)) => {
                        let amf_text = amf.map_or("n/a".to_string(), |a| format!("{a:.2}"));
                        eprintln!(
                            "{} {} seed {seed}: ACC {acc:.2} AMF {amf_text} ({elapsed:.1} s)",
                            config.dataset,
                            strategy.name()
                        );
                        SeedResult {
                            seed,
                            ok: true,
                            acc: Some(acc),
                            amf,
                            error: None,
                        }
                    }
                    Err(e) => {
                        eprintln!("{} {} seed {seed}: FAILED: {e}", config.dataset, strategy.name());
                        SeedResult {
                            seed,
                            ok: false,
                            acc: None,
                            amf: None,
                            error: Some(e.to_string()),
                        }
                    }
                }
            })
            .collect()
    });

    let failed = results.iter().any(|r| !r.ok);
    let mut per_strategy: Vec<Vec<SeedResult>> = vec![Vec::new(); strategies.len()];
    for (&(s, _), r) in jobs.iter().zip(results) {
        per_strategy[s].push(r);
    }
    let entry = DatasetSummary {
        epochs: config.epochs(),
        lr: config.lr,
        batch_size: config.batch_size,
        strategies: strategies
            .iter()
            .zip(per_strategy)
            .map(|(s, runs)| summarize(*s, runs))
            .collect(),
    };
    let mut summary = if Summary::path(&config.out_dir).is_file() {
        Summary::load(&config.out_dir)?
    } else {
        Summary::default()
    };
    summary.datasets.insert(config.dataset.name().to_string(), entry);
    summary.save(&config.out_dir)?;
    Ok((summary, failed))
}
