//! `frcr analyze`: diagnostics over the checkpoints of finished runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use frcr::datasets::TaskDataset;
use frcr::harness::{prepare_head, RunRecord, StrategyConfig};
use frcr::metrics::{
    drift_check, noise_sweep, prediction_snapshot, representation_correlation, write_csv_file, DriftProbe,
};
use frcr::nn::{Checkpoint, MlpModel};
use frcr::{Error, Result};

use crate::config::ExperimentConfig;
use crate::run::{checkpoint_path, load_tasks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Analysis {
    Noise,
    Drift,
    Corr,
    Snapshots,
}

impl Analysis {
    pub fn file_name(self) -> &'static str {
        match self {
            Analysis::Noise => "noise_sweep.csv",
            Analysis::Drift => "drift.csv",
            Analysis::Corr => "correlations.csv",
            Analysis::Snapshots => "snapshots.csv",
        }
    }
}

pub struct RunInfo {
    pub strategy: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub record: RunRecord,
}

impl RunInfo {
    fn tasks(&self) -> usize {
        self.record.task_order.len()
    }

    /// Model saved after 1-based task `task`.
    fn model_after(&self, task: usize) -> Result<MlpModel> {
        let path = checkpoint_path(&self.dir, task);
        if !path.is_file() {
            return Err(Error::State(format!(
                "missing checkpoint for task {task} of {} seed {} ({})",
                self.strategy,
                self.seed,
                path.display()
            )));
        }
        Checkpoint::load(&path)?.into_model()
    }

    fn task_data<'a>(&self, tasks: &'a [TaskDataset], position: usize) -> &'a TaskDataset {
        &tasks[self.record.task_order[position]]
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Every `<strategy>/<seed>/run.json` under `out_dir/<dataset>`, in strategy
/// name then numeric seed order.
pub fn discover_runs(out_dir: &Path, dataset: &str) -> Result<Vec<RunInfo>> {
    let root = out_dir.join(dataset);
    if !root.is_dir() {
        return Err(Error::State(format!("no runs under {}", root.display())));
    }
    let mut runs = Vec::new();
    for strategy_dir in sorted_dirs(&root)? {
        let strategy = strategy_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        for seed_dir in sorted_dirs(&strategy_dir)? {
            let Some(seed) = seed_dir.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse().ok()) else {
                continue;
            };
            let path = seed_dir.join("run.json");
            if !path.is_file() {
                continue;
            }
            let record: RunRecord = serde_json::from_str(&fs::read_to_string(&path)?)?;
            runs.push(RunInfo {
                strategy: strategy.clone(),
                seed,
                dir: seed_dir,
                record,
            });
        }
    }
    runs.sort_by(|a, b| (&a.strategy, a.seed).cmp(&(&b.strategy, b.seed)));
    if runs.is_empty() {
        return Err(Error::State(format!("no runs under {}", root.display())));
    }
    Ok(runs)
}

#[derive(Serialize)]
struct NoiseRow<'a> {
    strategy: &'a str,
    seed: u64,
    task: usize,
    k: f64,
    mean_abs_offset: f64,
}

#[derive(Serialize)]
struct DriftRow<'a> {
    seed: u64,
    cosine: f64,
    r_predicted: f64,
    r_measured: f64,
    strategy: &'a str,
    gram: f64,
    offset_measured: f64,
    offset_predicted: f64,
    masks_stable: bool,
}

#[derive(Serialize)]
struct CorrRow<'a> {
    strategy: &'a str,
    seed: u64,
    category: u8,
    mean_pearson: f64,
    skipped: usize,
}

#[derive(Serialize)]
struct SnapshotCsvRow<'a> {
    strategy: &'a str,
    seed: u64,
    tag: usize,
    task: usize,
    sample: usize,
    y1: f64,
    y2: f64,
    label: u8,
}

/// Which runs and parameters an analysis uses beyond the saved config.
#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub strategy: Option<String>,
    pub category: Option<u8>,
    pub task: Option<usize>,
}

/// Writes `out_dir/analysis/<file>` and returns its path.
pub fn cmd_analyze(config: &ExperimentConfig, which: Analysis, opts: &AnalyzeOptions) -> Result<PathBuf> {
    let runs = discover_runs(&config.out_dir, config.dataset.name())?;
    let tasks = load_tasks(config)?;
    let out = config.out_dir.join("analysis").join(which.file_name());
    fs::create_dir_all(out.parent().expect("analysis dir"))?;
    let selected: Vec<&RunInfo> = runs
        .iter()
        .filter(|r| opts.strategy.as_deref().is_none_or(|s| s == r.strategy))
        .collect();

    match which {
        Analysis::Noise => {
            let mut rows = Vec::new();
            for run in &selected {
                let model = run.model_after(run.tasks())?;
                for p in 0..run.tasks() {
                    let probe = frcr::metrics::NoiseProbe {
                        seed: run.seed,
                        ..config.analysis.noise.clone()
                    };
                    for point in noise_sweep(&model, p, run.task_data(&tasks, p), &probe)? {
                        rows.push(NoiseRow {
                            strategy: &run.strategy,
                            seed: run.seed,
                            task: p + 1,
                            k: point.k,
                            mean_abs_offset: point.mean_abs_offset,
                        });
                    }
                }
            }
            write_csv_file(&out, &rows)?;
        }
        Analysis::Drift => {
            let wanted = opts.strategy.as_deref().unwrap_or(&config.analysis.drift_strategy);
            let mut rows = Vec::new();
            for run in runs.iter().filter(|r| r.strategy == wanted) {
                if run.tasks() < 2 {
                    return Err(Error::State(format!("drift needs two tasks, {} seed {} has one", run.strategy, run.seed)));
                }
                let mut model = run.model_after(1)?;
                let strategy: StrategyConfig = run.record.strategy;
                let mut head_b = prepare_head(&strategy, 1, Some(model.head(0)?), model.arch().hidden2, run.seed)?;
                head_b.freeze();
                let head_b = model.push_head(head_b)?;
                let task_b = run.task_data(&tasks, 1);
                let task_a = run.task_data(&tasks, 0);
                let probe = DriftProbe {
                    lr: config.analysis.drift_lr.unwrap_or(run.record.train.lr),
                    sample_b: (task_b.train_x.row(0), task_b.train_y[0]),
                    probe_a: task_a.test_x.row(0),
                };
                let r = drift_check(&model, 0, head_b, &probe)?;
                rows.push(DriftRow {
                    seed: run.seed,
                    cosine: r.cosine,
                    r_predicted: r.r_predicted,
                    r_measured: r.r_measured,
                    strategy: &run.strategy,
                    gram: r.gram,
                    offset_measured: r.offset_measured,
                    offset_predicted: r.offset_predicted,
                    masks_stable: r.masks_stable,
                });
            }
            if rows.is_empty() {
                return Err(Error::State(format!("no {wanted} runs to probe")));
            }
            write_csv_file(&out, &rows)?;
        }
        Analysis::Corr => {
            let category = opts.category.unwrap_or(config.analysis.category);
            let mut rows = Vec::new();
            for run in &selected {
                let position = (0..run.tasks())
                    .find(|&p| {
                        let pair = run.task_data(&tasks, p).class_pair;
                        pair.0 == category || pair.1 == category
                    })
                    .ok_or_else(|| Error::Config(format!("category {category} belongs to no task")))?;
                let then = run.model_after(position + 1)?;
                let now = run.model_after(run.tasks())?;
                let c = representation_correlation(
                    &then,
                    &now,
                    run.task_data(&tasks, position),
                    category,
                    config.analysis.correlation_samples,
                )?;
                rows.push(CorrRow {
                    strategy: &run.strategy,
                    seed: run.seed,
                    category,
                    mean_pearson: c.mean_pearson,
                    skipped: c.skipped,
                });
            }
            write_csv_file(&out, &rows)?;
        }
        Analysis::Snapshots => {
            let task = opts.task.unwrap_or(config.analysis.snapshot_task);
            let mut rows = Vec::new();
            for run in &selected {
                if task == 0 || task > run.tasks() {
                    return Err(Error::Config(format!("snapshot task {task} outside 1..={}", run.tasks())));
                }
                for tag in task..=run.tasks() {
                    let model = run.model_after(tag)?;
                    for s in prediction_snapshot(&model, task - 1, run.task_data(&tasks, task - 1), &tag.to_string())? {
                        rows.push(SnapshotCsvRow {
                            strategy: &run.strategy,
                            seed: run.seed,
                            tag,
                            task,
                            sample: s.sample,
                            y1: s.y1,
                            y2: s.y2,
                            label: s.label,
                        });
                    }
                }
            }
            write_csv_file(&out, &rows)?;
        }
    }
    Ok(out)
}
