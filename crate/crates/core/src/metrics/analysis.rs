//! Diagnostics on trained models: noise-injected prediction offsets,
//! classifier norms, one-step representation drift, representation
//! correlation across checkpoints and raw prediction snapshots.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifiers::Head;
use crate::datasets::TaskDataset;
use crate::error::{Error, Result};
use crate::nn::matrix::{dot, norm};
use crate::nn::{backward, forward, hidden1_batch, BatchPass, MlpModel, Mode};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProbe {
    pub amplitudes: Vec<f64>,
    pub trials: usize,
    /// Cap on test samples used; `None` uses all of them.
    #[serde(default)]
    pub max_samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseProbe {
    fn default() -> Self {
        Self {
            amplitudes: vec![0.0, 1.0, 2.0, 4.0, 6.0],
            trials: 10,
            max_samples: Some(500),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub k: f64,
    pub mean_abs_offset: f64,
}

/// Mean `|Δŷ|` when `h2` is perturbed by `k·ε`, `ε ~ N(0, I)` drawn fresh
/// for every (amplitude, sample, trial).
pub fn noise_sweep(model: &MlpModel, head_idx: usize, test: &TaskDataset, probe: &NoiseProbe) -> Result<Vec<NoisePoint>> {
    if probe.trials == 0 {
        return Err(Error::Config("noise probe needs at least one trial".into()));
    }
    if let Some(k) = probe.amplitudes.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
        return Err(Error::Config(format!("noise amplitude {k} must be finite and >= 0")));
    }
    let n = probe.max_samples.map_or(test.test_x.len(), |m| m.min(test.test_x.len()));
    if n == 0 {
        return Err(Error::Config("noise sweep over an empty test set".into()));
    }
    let x = test.test_x.gather(&(0..n).collect::<Vec<_>>());
    let pass = BatchPass::run(model, head_idx, &x, Mode::Eval, None)?;
    let w_hat = model.head(head_idx)?.equivalent();
    let n2 = w_hat.as_slice().len();

    let mut rng = stream_rng(probe.seed, Stream::Noise, &[head_idx as u64]);
    let mut noisy = vec![0.0; n2];
    let mut out = Vec::with_capacity(probe.amplitudes.len());
    for &k in &probe.amplitudes {
        let mut total = 0.0;
        for s in 0..n {
            let h2 = pass.h2.row(s);
            let clean = w_hat.predict(h2);
            for _ in 0..probe.trials {
                for (o, &h) in noisy.iter_mut().zip(h2) {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *o = h + k * eps;
                }
                total += (w_hat.predict(&noisy) - clean).abs();
            }
        }
        out.push(NoisePoint {
            k,
            mean_abs_offset: total / (n * probe.trials) as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Shape("linear fit needs two or more paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// `‖ŵ‖₂` of the head's equivalent classifier.
pub fn norm_trace(head: &Head) -> f64 {
    head.equivalent().norm()
}

/// Inputs of the one-step drift experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftProbe {
    pub lr: f64,
    /// A task-B training sample and its binary label.
    pub sample_b: (Vec<f64>, u8),
    /// A task-A input.
    pub probe_a: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `|cos|` between the measured pre-activation drift of task A and the
    /// task-B error direction `δ`. Reported as 1 when the drift is zero.
    pub cosine: f64,
    /// `-η (h1^B·h1^A) ∂L/∂y1^B`
    pub r_predicted: f64,
    /// Measured drift projected on `ŵ^B ⊙ mask(h2^B)`.
    pub r_measured: f64,
    /// `h1^B·h1^A`
    pub gram: f64,
    /// `|ŷ^A(after) - ŷ^A(before)|`
    pub offset_measured: f64,
    /// `|r|·|(ŵ^A ⊙ mask(h2^A))·(ŵ^B ⊙ mask(h2^B))|`; reduces to
    /// `|r|·|ŵ^A·ŵ^B|` when every unit is active.
    pub offset_predicted: f64,
    /// `|r|·|ŵ^A·ŵ^B|` without any masks.
    pub offset_unmasked: f64,
    /// No unit of task A's `h2` switched between active and inactive.
    pub masks_stable: bool,
}

/// One plain SGD step on `V` alone, driven by a single task-B sample, and
/// the resulting movement of task A's second-layer pre-activation.
///
/// `U` and both heads stay fixed, so `h1^A` is unchanged and the update
/// `ΔV = -η δ h1^Bᵀ` is rank one: the drift `ΔV h1^A` must be a multiple of
/// `δ = ∂L/∂y1^B · (ŵ^B ⊙ mask(h2^B))`, with coefficient `r`.
pub fn drift_check(model: &MlpModel, head_a: usize, head_b: usize, probe: &DriftProbe) -> Result<DriftReport> {
    for idx in [head_a, head_b] {
        if !model.head(idx)?.is_frozen() {
            return Err(Error::Protocol(format!("head {idx} must be frozen for the drift probe")));
        }
    }
    if !(probe.lr >= 0.0 && probe.lr.is_finite()) {
        return Err(Error::Protocol(format!("drift probe needs a finite lr >= 0, got {}", probe.lr)));
    }
    let (x_b, label_b) = (&probe.sample_b.0, probe.sample_b.1);

    let trace_b = forward(model, head_b, x_b, Mode::Eval, None)?;
    let g1 = crate::nn::output_error(trace_b.logits, label_b)?;
    let w_hat_b = model.head(head_b)?.equivalent();
    let w_hat_a = model.head(head_a)?.equivalent();
    let dir_b: Vec<f64> = w_hat_b
        .as_slice()
        .iter()
        .zip(&trace_b.pre2)
        .map(|(w, p)| if *p > 0.0 { *w } else { 0.0 })
        .collect();
    let delta: Vec<f64> = dir_b.iter().map(|d| g1 * d).collect();

    // Sandboxed step: only V moves.
    let grads = backward(model, head_b, &trace_b, label_b)?;
    let mut stepped = model.clone();
    stepped.v_mut().add_scaled(-probe.lr, &grads.d_v);

    let before = forward(model, head_a, &probe.probe_a, Mode::Eval, None)?;
    let after = forward(&stepped, head_a, &probe.probe_a, Mode::Eval, None)?;
    debug_assert_eq!(before.h1, after.h1);
    let drift: Vec<f64> = after.pre2.iter().zip(&before.pre2).map(|(a, b)| a - b).collect();

    let (nd, ndelta) = (norm(&drift), norm(&delta));
    let cosine = if nd == 0.0 || ndelta == 0.0 {
        1.0
    } else {
        (dot(&drift, &delta) / (nd * ndelta)).abs()
    };
    let gram = dot(&trace_b.h1, &before.h1);
    let r_predicted = -probe.lr * gram * g1;
    let dir_sq = dot(&dir_b, &dir_b);
    let r_measured = if dir_sq == 0.0 { 0.0 } else { dot(&drift, &dir_b) / dir_sq };

    let offset_measured = (w_hat_a.predict(&after.h2) - w_hat_a.predict(&before.h2)).abs();
    let masked_corr: f64 = w_hat_a
        .as_slice()
        .iter()
        .zip(&dir_b)
        .zip(&before.pre2)
        .map(|((a, b), p)| if *p > 0.0 { a * b } else { 0.0 })
        .sum();
    let masks_stable = before
        .pre2
        .iter()
        .zip(&after.pre2)
        .all(|(b, a)| (*b > 0.0) == (*a > 0.0));

    Ok(DriftReport {
        cosine,
        r_predicted,
        r_measured,
        gram,
        offset_measured,
        offset_predicted: r_predicted.abs() * masked_corr.abs(),
        offset_unmasked: r_predicted.abs() * dot(w_hat_a.as_slice(), w_hat_b.as_slice()).abs(),
        masks_stable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub mean_pearson: f64,
    pub used: usize,
    /// Images whose `h1` was constant at either time (Pearson undefined).
    pub skipped: usize,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Per-image Pearson correlation of `h1` between `checkpoint` and `final_model`
/// for the first `sample_n` test images of original class `category`,
/// averaged over images with a defined correlation.
pub fn representation_correlation(
    checkpoint: &MlpModel,
    final_model: &MlpModel,
    task: &TaskDataset,
    category: u8,
    sample_n: usize,
) -> Result<CorrelationSummary> {
    let label = if task.class_pair.0 == category {
        0
    } else if task.class_pair.1 == category {
        1
    } else {
        return Err(Error::Config(format!(
            "category {category} not in task {} with classes {:?}",
            task.task_id, task.class_pair
        )));
    };
    let indices: Vec<usize> = task
        .test_y
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == label)
        .map(|(i, _)| i)
        .take(sample_n)
        .collect();
    let x = task.test_x.gather(&indices);
    let then = hidden1_batch(checkpoint, &x)?;
    let now = hidden1_batch(final_model, &x)?;

    let mut total = 0.0;
    let (mut used, mut skipped) = (0, 0);
    for r in 0..indices.len() {
        match pearson(then.row(r), now.row(r)) {
            Some(p) => {
                total += p;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(CorrelationSummary {
        mean_pearson: if used == 0 { f64::NAN } else { total / used as f64 },
        used,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub tag: String,
    pub sample: usize,
    pub y1: f64,
    pub y2: f64,
    pub label: u8,
}

/// Raw logits of every test sample of `test` under head `head_idx`.
pub fn prediction_snapshot(model: &MlpModel, head_idx: usize, test: &TaskDataset, tag: &str) -> Result<Vec<SnapshotRow>> {
    let x = test.test_x.all();
    let logits = BatchPass::run(model, head_idx, &x, Mode::Eval, None)?.logits;
    Ok(logits
        .iter()
        .zip(&test.test_y)
        .enumerate()
        .map(|(sample, (l, &label))| SnapshotRow {
            tag: tag.to_string(),
            sample,
            y1: l[0],
            y2: l[1],
            label,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::new_random_head;
    use crate::nn::{init_mlp, Architecture, Matrix};

    fn toy_task(dim: usize, n: usize) -> TaskDataset {
        let x = Matrix::from_fn(n, dim, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let y = (0..n).map(|i| (i % 2) as u8).collect::<Vec<_>>();
        TaskDataset::from_real(0, (2, 3), x.clone(), y.clone(), x, y).unwrap()
    }

    fn frozen_model(dims: (usize, usize, usize), heads: usize, seed: u64) -> MlpModel {
        let mut m = init_mlp(Architecture::new(dims.0, dims.1, dims.2), seed).unwrap();
        for t in 0..heads {
            let mut h = new_random_head(dims.2, seed * 100 + t as u64).unwrap().with_task_id(t);
            h.freeze();
            m.push_head(h).unwrap();
        }
        m
    }

    #[test]
    fn noise_zero_amplitude_is_zero() {
        let m = frozen_model((5, 4, 6), 1, 1);
        let probe = NoiseProbe {
            amplitudes: vec![0.0, 1.0],
            trials: 3,
            max_samples: None,
            seed: 0,
        };
        let curve = noise_sweep(&m, 0, &toy_task(5, 4), &probe).unwrap();
        assert_eq!(curve[0].mean_abs_offset, 0.0);
        assert!(curve[1].mean_abs_offset > 0.0);
    }

    #[test]
    fn norm_of_three_four() {
        let h = Head::from_weights(Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap());
        assert_eq!(norm_trace(&h), 5.0);
    }

    #[test]
    fn linear_fit_exact_line() {
        let fit = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-15);
        assert!((fit.intercept - 1.0).abs() < 1e-15);
        assert!((fit.r_squared - 1.0).abs() < 1e-15);
    }

    #[test]
    fn drift_needs_frozen_heads() {
        let mut m = init_mlp(Architecture::new(3, 3, 3), 0).unwrap();
        m.push_head(new_random_head(3, 1).unwrap()).unwrap();
        m.push_head(new_random_head(3, 2).unwrap()).unwrap();
        let probe = DriftProbe {
            lr: 0.1,
            sample_b: (vec![1.0; 3], 0),
            probe_a: vec![1.0; 3],
        };
        assert!(matches!(drift_check(&m, 0, 1, &probe), Err(Error::Protocol(_))));
    }

    #[test]
    fn zero_lr_gives_zero_drift() {
        let m = frozen_model((4, 5, 6), 2, 3);
        let probe = DriftProbe {
            lr: 0.0,
            sample_b: (vec![0.3, 0.9, 0.1, 0.5], 1),
            probe_a: vec![0.7, 0.2, 0.4, 0.8],
        };
        let r = drift_check(&m, 0, 1, &probe).unwrap();
        assert_eq!(r.r_measured, 0.0);
        assert_eq!(r.r_predicted.abs(), 0.0);
        assert_eq!(r.offset_measured, 0.0);
    }

    #[test]
    fn orthogonal_h1_gives_zero_drift() {
        // U = identity: h1 = x, so disjoint nonnegative supports are orthogonal.
        let mut m = frozen_model((4, 4, 5), 2, 4);
        *m.u_mut() = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let probe = DriftProbe {
            lr: 0.5,
            sample_b: (vec![1.0, 2.0, 0.0, 0.0], 0),
            probe_a: vec![0.0, 0.0, 3.0, 1.0],
        };
        let r = drift_check(&m, 0, 1, &probe).unwrap();
        assert_eq!(r.gram, 0.0);
        assert_eq!(r.r_predicted.abs(), 0.0);
        assert_eq!(r.r_measured, 0.0);
    }

    #[test]
    fn identical_models_correlate_perfectly() {
        let m = frozen_model((5, 6, 4), 1, 2);
        let task = toy_task(5, 10);
        let c = representation_correlation(&m, &m, &task, 3, 100).unwrap();
        assert_eq!(c.used + c.skipped, 5);
        assert!((c.mean_pearson - 1.0).abs() < 1e-12);
        assert!(representation_correlation(&m, &m, &task, 7, 5).is_err());
    }

    #[test]
    fn constant_h1_is_skipped() {
        let mut m = frozen_model((2, 3, 3), 1, 2);
        *m.u_mut() = Matrix::zeros(3, 2);
        let task = toy_task(2, 6);
        let c = representation_correlation(&m, &m, &task, 2, 100).unwrap();
        assert_eq!((c.used, c.skipped), (0, 3));
        assert!(c.mean_pearson.is_nan());
    }

    #[test]
    fn snapshot_has_one_row_per_sample() {
        let m = frozen_model((5, 4, 4), 2, 9);
        let task = toy_task(5, 7);
        let mut rows = Vec::new();
        for t in 1..=5 {
            rows.extend(prediction_snapshot(&m, 1, &task, &format!("after_task_{t}")).unwrap());
        }
        assert_eq!(rows.len(), 35);
        let t = forward(&m, 1, &task.test_x.row(2), Mode::Eval, None).unwrap();
        assert!((rows[2].y1 - t.logits[0]).abs() < 1e-14);
        assert_eq!(rows[2].label, 0);
    }
}
