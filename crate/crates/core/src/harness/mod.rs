//! Sequential multi-task training under the different strategies.

pub mod ewc;

use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifiers::{new_random_head, rearrange, Head};
use crate::datasets::TaskDataset;
use crate::error::{Error, Result};
use crate::metrics::{norm_trace, write_csv_file, AccuracyMatrix};
use crate::nn::{batch_logits, init_mlp, predict, sgd_batch_step, Architecture, MlpModel, Mode};
use crate::rng::{derive_seed, stream_rng, Stream};

pub use ewc::{estimate_fisher, ewc_penalty, FisherDiag, PenaltyGradients};

pub const DEFAULT_EWC_LAMBDA: f64 = 100.0;
pub const DEFAULT_GAMMA: f64 = 0.7;
pub const DEFAULT_DROPOUT: f64 = 0.25;
pub const DEFAULT_SMALL_BATCH: usize = 10;

const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawStrategy")]
pub enum StrategyConfig {
    Baseline,
    Frc,
    Frcr,
    Ewc {
        ewc_lambda: f64,
        /// Caps the samples used per Fisher estimate; all when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fisher_samples: Option<usize>,
    },
    StableSgd {
        lr_decay_gamma: f64,
        dropout_rate: f64,
        small_batch: usize,
    },
}

/// Flat form used while deserializing, so fields of other kinds are rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrategy {
    kind: String,
    ewc_lambda: Option<f64>,
    fisher_samples: Option<usize>,
    lr_decay_gamma: Option<f64>,
    dropout_rate: Option<f64>,
    small_batch: Option<usize>,
}

impl TryFrom<RawStrategy> for StrategyConfig {
    type Error = Error;

    fn try_from(raw: RawStrategy) -> Result<Self> {
        let ewc_fields = raw.ewc_lambda.is_some() || raw.fisher_samples.is_some();
        let stable_fields = raw.lr_decay_gamma.is_some() || raw.dropout_rate.is_some() || raw.small_batch.is_some();
        let strategy = match raw.kind.parse::<Self>()? {
            Self::Ewc { .. } if !stable_fields => Self::Ewc {
                ewc_lambda: raw.ewc_lambda.unwrap_or(DEFAULT_EWC_LAMBDA),
                fisher_samples: raw.fisher_samples,
            },
            Self::StableSgd { .. } if !ewc_fields => Self::StableSgd {
                lr_decay_gamma: raw.lr_decay_gamma.unwrap_or(DEFAULT_GAMMA),
                dropout_rate: raw.dropout_rate.unwrap_or(DEFAULT_DROPOUT),
                small_batch: raw.small_batch.unwrap_or(DEFAULT_SMALL_BATCH),
            },
            plain @ (Self::Baseline | Self::Frc | Self::Frcr) if !ewc_fields && !stable_fields => plain,
            other => {
                return Err(Error::Config(format!(
                    "strategy {:?} given hyperparameters of another kind",
                    other.name()
                )))
            }
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl StrategyConfig {
    pub const NAMES: [&'static str; 5] = ["baseline", "frc", "frcr", "ewc", "stable_sgd"];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Frc => "frc",
            Self::Frcr => "frcr",
            Self::Ewc { .. } => "ewc",
            Self::StableSgd { .. } => "stable_sgd",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Ewc { ewc_lambda, .. } if !(ewc_lambda >= 0.0 && ewc_lambda.is_finite()) => {
                Err(Error::Config(format!("ewc_lambda must be a finite value >= 0, got {ewc_lambda}")))
            }
            Self::StableSgd {
                lr_decay_gamma,
                dropout_rate,
                small_batch,
            } => {
                if !(lr_decay_gamma > 0.0 && lr_decay_gamma <= 1.0) {
                    return Err(Error::Config(format!("lr_decay_gamma must lie in (0, 1], got {lr_decay_gamma}")));
                }
                if !(0.0..1.0).contains(&dropout_rate) {
                    return Err(Error::Config(format!("dropout_rate must lie in [0, 1), got {dropout_rate}")));
                }
                if small_batch == 0 {
                    return Err(Error::Config("small_batch must be at least 1".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Whether heads are random and frozen from the start.
    pub fn fixed_heads(&self) -> bool {
        matches!(self, Self::Frc | Self::Frcr)
    }

    pub fn batch_size(&self, default: usize) -> usize {
        match *self {
            Self::StableSgd { small_batch, .. } => small_batch,
            _ => default,
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        match *self {
            Self::StableSgd { dropout_rate, .. } => dropout_rate,
            _ => 0.0,
        }
    }
}

impl FromStr for StrategyConfig {
    type Err = Error;

    /// A strategy name with default hyperparameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "frc" => Ok(Self::Frc),
            "frcr" => Ok(Self::Frcr),
            "ewc" => Ok(Self::Ewc {
                ewc_lambda: DEFAULT_EWC_LAMBDA,
                fisher_samples: None,
            }),
            "stable_sgd" | "stable-sgd" => Ok(Self::StableSgd {
                lr_decay_gamma: DEFAULT_GAMMA,
                dropout_rate: DEFAULT_DROPOUT,
                small_batch: DEFAULT_SMALL_BATCH,
            }),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?}; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Position `p` trains `datasets[task_order[p]]`. Identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_order: Option<Vec<usize>>,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            lr: 0.05,
            batch_size: 64,
            seed,
            task_order: None,
        }
    }

    pub fn validate(&self, tasks: usize) -> Result<Vec<usize>> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let order = self.task_order.clone().unwrap_or_else(|| (0..tasks).collect());
        let mut seen = vec![false; tasks];
        if order.len() != tasks {
            return Err(Error::Config(format!("task_order has {} entries for {tasks} tasks", order.len())));
        }
        for &t in &order {
            if t >= tasks || std::mem::replace(&mut seen[t], true) {
                return Err(Error::Config(format!("task_order {order:?} is not a permutation of 0..{tasks}")));
            }
        }
        Ok(order)
    }
}

/// Seed of the random head drawn for task position `task_idx`.
pub fn head_seed(seed: u64, task_idx: usize) -> u64 {
    derive_seed(seed, Stream::Head, &[task_idx as u64])
}

pub fn prepare_head(
    strategy: &StrategyConfig,
    task_idx: usize,
    prev_head: Option<&Head>,
    n2: usize,
    seed: u64,
) -> Result<Head> {
    if prev_head.is_some() != (task_idx > 0) {
        return Err(Error::Config(format!(
            "task {task_idx}: a previous head must be given exactly when task_idx > 0"
        )));
    }
    let mut head = new_random_head(n2, head_seed(seed, task_idx))?.with_task_id(task_idx);
    match strategy {
        StrategyConfig::Frc => head.freeze(),
        StrategyConfig::Frcr => {
            if let Some(prev) = prev_head {
                head = rearrange(&head, prev)?;
            }
            head.freeze();
        }
        _ => {}
    }
    Ok(head)
}

pub fn stable_sgd_schedule(strategy: &StrategyConfig, task_idx: usize, base_lr: f64) -> f64 {
    match *strategy {
        StrategyConfig::StableSgd { lr_decay_gamma, .. } => base_lr * lr_decay_gamma.powi(task_idx as i32),
        _ => base_lr,
    }
}

/// Test accuracy in percent, eval mode.
pub fn evaluate(model: &MlpModel, head_idx: usize, test: &TaskDataset) -> Result<f64> {
    let n = test.test_x.len();
    if n == 0 {
        return Err(Error::Config(format!("task {}: empty test set", test.task_id)));
    }
    let indices: Vec<usize> = (0..n).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let logits = batch_logits(model, head_idx, &test.test_x.gather(chunk))?;
        correct += chunk
            .iter()
            .zip(&logits)
            .filter(|(&i, l)| predict(**l).label() == test.test_y[i])
            .count();
    }
    Ok(100.0 * correct as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub step: usize,
    /// 1-based task position.
    pub task: usize,
    pub equiv_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub strategy: StrategyConfig,
    pub train: TrainConfig,
    pub arch: Architecture,
    pub task_order: Vec<usize>,
    pub accuracy_matrix: AccuracyMatrix,
    pub acc: f64,
    /// Absent for single-task runs.
    pub amf: Option<f64>,
    /// Mean training loss over the last epoch of each task.
    pub final_loss: Vec<f64>,
    pub task_seconds: Vec<f64>,
    #[serde(default)]
    pub artifacts: Vec<String>,
    /// Written to `norms.csv` rather than the JSON record.
    #[serde(skip)]
    pub norm_traces: Vec<NormRecord>,
}

impl RunRecord {
    /// Writes `run.json`, `accuracy_matrix.csv` and `norms.csv` into `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for name in ["accuracy_matrix.csv", "norms.csv"] {
            if !self.artifacts.iter().any(|a| a == name) {
                self.artifacts.push(name.to_string());
            }
        }
        write_csv_file(&dir.join("accuracy_matrix.csv"), &self.accuracy_matrix.records())?;
        write_csv_file(&dir.join("norms.csv"), &self.norm_traces)?;
        fs::write(dir.join("run.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Callback invoked after each task finishes training and evaluation.
pub trait RunObserver {
    fn task_finished(&mut self, position: usize, model: &MlpModel, order: &[usize]) -> Result<()>;
}

struct NoObserver;

impl RunObserver for NoObserver {
    fn task_finished(&mut self, _: usize, _: &MlpModel, _: &[usize]) -> Result<()> {
        Ok(())
    }
}

pub fn run_sequence(
    datasets: &[TaskDataset],
    strategy: &StrategyConfig,
    train: &TrainConfig,
    arch: Architecture,
) -> Result<RunRecord> {
    run_sequence_observed(datasets, strategy, train, arch, &mut NoObserver)
}

pub fn run_sequence_observed(
    datasets: &[TaskDataset],
    strategy: &StrategyConfig,
    train: &TrainConfig,
    arch: Architecture,
    observer: &mut dyn RunObserver,
) -> Result<RunRecord> {
    Ok(run_sequence_model(datasets, strategy, train, arch, observer)?.0)
}

/// Like [`run_sequence_observed`] but also returns the final model.
pub fn run_sequence_model(
    datasets: &[TaskDataset],
    strategy: &StrategyConfig,
    train: &TrainConfig,
    arch: Architecture,
    observer: &mut dyn RunObserver,
) -> Result<(RunRecord, MlpModel)> {
    if datasets.is_empty() {
        return Err(Error::Config("a run needs at least one task".into()));
    }
    strategy.validate()?;
    let order = train.validate(datasets.len())?;
    for d in datasets {
        if d.dim() != arch.input_dim {
            return Err(Error::Config(format!(
                "task {} has {} features but the architecture expects {}",
                d.task_id,
                d.dim(),
                arch.input_dim
            )));
        }
    }
    let arch = arch.with_dropout(strategy.dropout_rate());
    let seed = train.seed;
    let mut model = init_mlp(arch, seed)?;
    let batch = strategy.batch_size(train.batch_size);

    let mut matrix = AccuracyMatrix::new(datasets.len());
    let mut fishers: Vec<FisherDiag> = Vec::new();
    let mut norms = Vec::new();
    let mut final_loss = Vec::new();
    let mut task_seconds = Vec::new();
    let mut step = 0usize;

    for (pos, &task) in order.iter().enumerate() {
        let started = Instant::now();
        let data = &datasets[task];
        let n = data.train_x.len();
        if n == 0 {
            return Err(Error::Config(format!("task {pos}: empty training set")));
        }
        let head = prepare_head(strategy, pos, model.heads().last(), arch.hidden2, seed)?;
        let h = model.push_head(head)?;
        let lr = stable_sgd_schedule(strategy, pos, train.lr);
        let numeric = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("task {pos}: {m}")),
            other => other,
        };

        let mut indices: Vec<usize> = (0..n).collect();
        let mut epoch_loss = 0.0;
        for epoch in 0..train.epochs {
            let coords = [pos as u64, epoch as u64];
            indices.shuffle(&mut stream_rng(seed, Stream::Shuffle, &coords));
            let mut dropout_rng = stream_rng(seed, Stream::Dropout, &coords);
            epoch_loss = 0.0;
            for chunk in indices.chunks(batch) {
                let x = data.train_x.gather(chunk);
                let y: Vec<u8> = chunk.iter().map(|&i| data.train_y[i]).collect();
                let mut penalty = None;
                if let StrategyConfig::Ewc { ewc_lambda, .. } = *strategy {
                    if ewc_lambda > 0.0 && !fishers.is_empty() {
                        let (value, grads) = ewc_penalty(&model, &fishers, ewc_lambda)?;
                        if !(value.is_finite() && grads.d_u.is_finite() && grads.d_v.is_finite()) {
                            return Err(Error::Numeric(format!("task {pos}: non-finite EWC penalty at step {step}")));
                        }
                        penalty = Some((value, grads));
                    }
                }
                let mut loss = sgd_batch_step(&mut model, h, &x, &y, Mode::Train, Some(&mut dropout_rng), lr)
                    .map_err(numeric)?;
                if let Some((value, grads)) = penalty {
                    loss += value;
                    model.u_mut().add_scaled(-lr, &grads.d_u);
                    model.v_mut().add_scaled(-lr, &grads.d_v);
                }
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("task {pos}: non-finite loss at step {step}")));
                }
                step += 1;
                epoch_loss += loss * chunk.len() as f64;
                norms.push(NormRecord {
                    step,
                    task: pos + 1,
                    equiv_norm: norm_trace(model.head(h)?),
                });
            }
        }
        final_loss.push(epoch_loss / n as f64);
        model.head_mut(h)?.freeze();

        if let StrategyConfig::Ewc {
            ewc_lambda,
            fisher_samples,
        } = *strategy
        {
            if ewc_lambda > 0.0 {
                fishers.push(estimate_fisher(&model, h, data, fisher_samples)?);
            }
        }

        let row = (0..=pos)
            .map(|i| evaluate(&model, i, &datasets[order[i]]))
            .collect::<Result<Vec<_>>>()?;
        matrix.push_row(row)?;
        task_seconds.push(started.elapsed().as_secs_f64());
        observer.task_finished(pos, &model, &order)?;
    }

    let record = RunRecord {
        dataset: None,
        strategy: *strategy,
        train: train.clone(),
        arch,
        task_order: order,
        acc: matrix.acc()?,
        amf: matrix.amf().ok(),
        accuracy_matrix: matrix,
        final_loss,
        task_seconds,
        artifacts: Vec::new(),
        norm_traces: norms,
    };
    Ok((record, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::dot_equiv;
    use crate::nn::Matrix;

    fn toy_tasks(count: usize, per_class: usize) -> Vec<TaskDataset> {
        (0..count)
            .map(|t| {
                let make = |offset: usize| {
                    let n = 2 * per_class;
                    let x = Matrix::from_fn(n, 4, |i, j| {
                        let label = i % 2;
                        let centre = if (j + t) % 2 == label { 1.0 } else { 0.0 };
                        centre + 0.1 * (((i + offset) * 7 + j * 3) % 5) as f64 / 5.0
                    });
                    let y = (0..n).map(|i| (i % 2) as u8).collect::<Vec<_>>();
                    (x, y)
                };
                let (tx, ty) = make(0);
                let (sx, sy) = make(1);
                TaskDataset::from_real(t, (2 * t as u8, 2 * t as u8 + 1), tx, ty, sx, sy).unwrap()
            })
            .collect()
    }

    fn small_arch() -> Architecture {
        Architecture::new(4, 8, 6)
    }

    #[test]
    fn schedule_closed_forms() {
        let s = StrategyConfig::StableSgd {
            lr_decay_gamma: 0.5,
            dropout_rate: 0.0,
            small_batch: 10,
        };
        assert_eq!(stable_sgd_schedule(&s, 0, 0.1), 0.1);
        assert_eq!(stable_sgd_schedule(&s, 2, 0.1), 0.1 / 4.0);
        let one = StrategyConfig::StableSgd {
            lr_decay_gamma: 1.0,
            dropout_rate: 0.0,
            small_batch: 10,
        };
        assert_eq!(stable_sgd_schedule(&one, 4, 0.1), 0.1);
        assert_eq!(stable_sgd_schedule(&StrategyConfig::Baseline, 3, 0.1), 0.1);
    }

    #[test]
    fn strategy_json_layout() {
        let s: StrategyConfig = serde_json::from_str(r#"{"kind":"ewc"}"#).unwrap();
        assert_eq!(s, "ewc".parse().unwrap());
        let s: StrategyConfig = serde_json::from_str(r#"{"kind":"stable_sgd","lr_decay_gamma":0.9}"#).unwrap();
        assert!(matches!(s, StrategyConfig::StableSgd { lr_decay_gamma, small_batch: 10, .. } if lr_decay_gamma == 0.9));
        assert!(serde_json::from_str::<StrategyConfig>(r#"{"kind":"frc","ewc_lambda":1}"#).is_err());
        assert!("nope".parse::<StrategyConfig>().is_err());
        for name in StrategyConfig::NAMES {
            assert_eq!(name.parse::<StrategyConfig>().unwrap().name(), name);
        }
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let bad = StrategyConfig::StableSgd {
            lr_decay_gamma: 0.0,
            dropout_rate: 0.1,
            small_batch: 3,
        };
        assert!(bad.validate().is_err());
        let bad = StrategyConfig::Ewc {
            ewc_lambda: -1.0,
            fisher_samples: None,
        };
        assert!(bad.validate().is_err());
        let mut t = TrainConfig::new(1, 0);
        t.task_order = Some(vec![0, 0]);
        assert!(t.validate(2).is_err());
        t.task_order = Some(vec![1, 0]);
        assert_eq!(t.validate(2).unwrap(), vec![1, 0]);
    }

    #[test]
    fn prepare_head_per_strategy() {
        let first = prepare_head(&StrategyConfig::Frcr, 0, None, 16, 3).unwrap();
        assert!(first.is_frozen());
        assert_eq!(first.weights(), new_random_head(16, head_seed(3, 0)).unwrap().weights());

        let frc = prepare_head(&StrategyConfig::Frc, 1, Some(&first), 16, 3).unwrap();
        assert!(frc.is_frozen());
        assert_eq!(frc.weights(), new_random_head(16, head_seed(3, 1)).unwrap().weights());

        let frcr = prepare_head(&StrategyConfig::Frcr, 1, Some(&first), 16, 3).unwrap();
        assert!(frcr.is_frozen());
        assert!(dot_equiv(&frcr, &first).unwrap().abs() <= dot_equiv(&frc, &first).unwrap().abs());

        let base = prepare_head(&StrategyConfig::Baseline, 0, None, 16, 3).unwrap();
        assert!(!base.is_frozen());
        assert!(prepare_head(&StrategyConfig::Baseline, 1, None, 16, 3).is_err());
    }

    #[test]
    fn evaluate_degenerate_and_scaled_heads() {
        let tasks = toy_tasks(1, 5);
        let mut m = init_mlp(small_arch(), 1).unwrap();
        m.push_head(Head::from_weights(Matrix::zeros(2, 6))).unwrap();
        // All ties go to class 2, i.e. label 1, which is half the set.
        assert_eq!(evaluate(&m, 0, &tasks[0]).unwrap(), 50.0);

        let mut m2 = init_mlp(small_arch(), 1).unwrap();
        m2.push_head(new_random_head(6, 4).unwrap()).unwrap();
        let before = evaluate(&m2, 0, &tasks[0]).unwrap();
        m2.head_mut(0).unwrap().weights_mut().unwrap().scale(7.5);
        assert_eq!(evaluate(&m2, 0, &tasks[0]).unwrap(), before);
    }

    #[test]
    fn single_task_gives_single_entry() {
        let tasks = toy_tasks(1, 4);
        let r = run_sequence(&tasks, &StrategyConfig::Baseline, &TrainConfig::new(2, 5), small_arch()).unwrap();
        assert_eq!(r.accuracy_matrix.rows().len(), 1);
        assert_eq!(r.accuracy_matrix.rows()[0].len(), 1);
        assert!(r.amf.is_none());
    }

    #[test]
    fn two_point_toy_reaches_full_accuracy() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = TaskDataset::from_real(0, (0, 1), x.clone(), vec![0, 1], x, vec![0, 1]).unwrap();
        let mut cfg = TrainConfig::new(300, 2);
        cfg.lr = 0.5;
        cfg.batch_size = 2;
        let r = run_sequence(&[t], &StrategyConfig::Baseline, &cfg, Architecture::new(2, 8, 8)).unwrap();
        assert_eq!(r.accuracy_matrix.get(0, 0), Some(100.0));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let tasks = toy_tasks(2, 3);
        let err = run_sequence(&tasks, &StrategyConfig::Frc, &TrainConfig::new(1, 0), Architecture::new(5, 4, 4));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn nan_input_reports_task() {
        let mut tasks = toy_tasks(2, 3);
        let mut x = Matrix::zeros(2, 4);
        x.as_mut_slice()[0] = f64::NAN;
        tasks[1].train_x = crate::datasets::Features::Real(x);
        tasks[1].train_y = vec![0, 1];
        match run_sequence(&tasks, &StrategyConfig::Baseline, &TrainConfig::new(1, 0), small_arch()) {
            Err(Error::Numeric(m)) => assert!(m.contains("task 1"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    struct HeadSnapshots(Vec<Vec<Head>>);

    impl RunObserver for HeadSnapshots {
        fn task_finished(&mut self, _: usize, model: &MlpModel, _: &[usize]) -> Result<()> {
            self.0.push(model.heads().to_vec());
            Ok(())
        }
    }

    #[test]
    fn fixed_heads_stay_bitwise_constant() {
        let tasks = toy_tasks(3, 4);
        for strategy in [StrategyConfig::Frc, StrategyConfig::Frcr, StrategyConfig::Baseline] {
            let mut obs = HeadSnapshots(Vec::new());
            run_sequence_observed(&tasks, &strategy, &TrainConfig::new(2, 9), small_arch(), &mut obs).unwrap();
            let last = obs.0.last().unwrap();
            for snap in &obs.0 {
                for (a, b) in snap.iter().zip(last) {
                    assert_eq!(a.weights(), b.weights());
                }
            }
            if strategy.fixed_heads() {
                assert_eq!(last[0].weights(), new_random_head(6, head_seed(9, 0)).unwrap().weights());
            }
        }
    }

    #[test]
    fn reductions_to_baseline() {
        let tasks = toy_tasks(3, 6);
        let mut cfg = TrainConfig::new(2, 4);
        cfg.batch_size = 5;
        let base = run_sequence(&tasks, &StrategyConfig::Baseline, &cfg, small_arch()).unwrap();
        let ewc0 = StrategyConfig::Ewc {
            ewc_lambda: 0.0,
            fisher_samples: None,
        };
        let stable1 = StrategyConfig::StableSgd {
            lr_decay_gamma: 1.0,
            dropout_rate: 0.0,
            small_batch: 5,
        };
        for s in [ewc0, stable1] {
            let r = run_sequence(&tasks, &s, &cfg, small_arch()).unwrap();
            assert_eq!(r.accuracy_matrix, base.accuracy_matrix);
            assert_eq!(r.norm_traces, base.norm_traces);
            assert_eq!(r.final_loss, base.final_loss);
        }
    }

    #[test]
    fn identity_order_is_reproducible() {
        let tasks = toy_tasks(3, 5);
        let cfg = TrainConfig::new(2, 8);
        let mut explicit = cfg.clone();
        explicit.task_order = Some(vec![0, 1, 2]);
        let a = run_sequence(&tasks, &StrategyConfig::Frcr, &cfg, small_arch()).unwrap();
        let b = run_sequence(&tasks, &StrategyConfig::Frcr, &explicit, small_arch()).unwrap();
        assert_eq!(a.accuracy_matrix, b.accuracy_matrix);
        let mut reversed = cfg;
        reversed.task_order = Some(vec![2, 1, 0]);
        let c = run_sequence(&tasks, &StrategyConfig::Frcr, &reversed, small_arch()).unwrap();
        assert_eq!(c.task_order, vec![2, 1, 0]);
        assert_eq!(c.accuracy_matrix.rows().len(), 3);
    }

    #[test]
    fn ewc_and_stable_runs_complete() {
        let tasks = toy_tasks(2, 5);
        for name in ["ewc", "stable_sgd"] {
            let s: StrategyConfig = name.parse().unwrap();
            let r = run_sequence(&tasks, &s, &TrainConfig::new(1, 1), small_arch()).unwrap();
            assert!(r.accuracy_matrix.is_complete());
        }
    }

    #[test]
    fn record_files_written() {
        let tasks = toy_tasks(2, 3);
        let mut r = run_sequence(&tasks, &StrategyConfig::Frcr, &TrainConfig::new(1, 1), small_arch()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        let acc = fs::read_to_string(dir.path().join("accuracy_matrix.csv")).unwrap();
        assert!(acc.starts_with("after_task,eval_task,accuracy_percent\n"));
        assert_eq!(acc.lines().count(), 4);
        let norms = fs::read_to_string(dir.path().join("norms.csv")).unwrap();
        assert!(norms.starts_with("step,task,equiv_norm\n"));
        let back: RunRecord = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
        assert_eq!(back.accuracy_matrix, r.accuracy_matrix);
    }
}
