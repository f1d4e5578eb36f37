//! Elastic weight consolidation on the shared backbone.

use serde::{Deserialize, Serialize};

use crate::datasets::TaskDataset;
use crate::error::{Error, Result};
use crate::nn::matrix::{gemm, Matrix};
use crate::nn::{output_error, predict, BatchPass, MlpModel, Mode};

const CHUNK: usize = 256;

/// Diagonal Fisher information for `U` and `V` plus the weights it was
/// measured at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDiag {
    pub u: Matrix,
    pub v: Matrix,
    pub anchor_u: Matrix,
    pub anchor_v: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGradients {
    pub d_u: Matrix,
    pub d_v: Matrix,
}

/// Mean over training samples of the squared log-likelihood gradient, taken
/// at the model's own predicted label. `max_samples` limits the estimate to
/// the first samples of the training split.
pub fn estimate_fisher(
    model: &MlpModel,
    head_idx: usize,
    data: &TaskDataset,
    max_samples: Option<usize>,
) -> Result<FisherDiag> {
    let n = max_samples.map_or(data.train_x.len(), |m| m.min(data.train_x.len()));
    if n == 0 {
        return Err(Error::Config("cannot estimate Fisher information on an empty dataset".into()));
    }
    let arch = model.arch();
    let mut f_u = Matrix::zeros(arch.hidden1, arch.input_dim);
    let mut f_v = Matrix::zeros(arch.hidden2, arch.hidden1);

    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(CHUNK) {
        let mut x = data.train_x.gather(chunk);
        let pass = BatchPass::run(model, head_idx, &x, Mode::Eval, None)?;
        let g1 = pass
            .logits
            .iter()
            .map(|&l| output_error(l, predict(l).label()))
            .collect::<Result<Vec<_>>>()?;
        let (mut d1, mut d2) = pass.deltas(model, &g1)?;
        // Per-sample gradients are outer products, so their squares sum to
        // (δ ∘ δ)ᵀ (a ∘ a).
        let square = |m: &mut Matrix| m.as_mut_slice().iter_mut().for_each(|v| *v *= *v);
        square(&mut d1);
        square(&mut d2);
        square(&mut x);
        let mut h1_sq = pass.h1;
        square(&mut h1_sq);
        gemm(1.0, d1.view().t(), x.view(), 1.0, f_u.as_mut_slice());
        gemm(1.0, d2.view().t(), h1_sq.view(), 1.0, f_v.as_mut_slice());
    }
    f_u.scale(1.0 / n as f64);
    f_v.scale(1.0 / n as f64);
    Ok(FisherDiag {
        u: f_u,
        v: f_v,
        anchor_u: model.u().clone(),
        anchor_v: model.v().clone(),
    })
}

/// `(λ/2) Σ_tasks Σ F (θ - θ*)²` and its gradient `λ F (θ - θ*)` with respect
/// to the backbone.
pub fn ewc_penalty(model: &MlpModel, fishers: &[FisherDiag], lambda: f64) -> Result<(f64, PenaltyGradients)> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Config(format!("EWC lambda must be >= 0, got {lambda}")));
    }
    let mut d_u = Matrix::zeros(model.u().rows(), model.u().cols());
    let mut d_v = Matrix::zeros(model.v().rows(), model.v().cols());
    let mut value = 0.0;
    for f in fishers {
        if f.u.shape() != model.u().shape() || f.v.shape() != model.v().shape() {
            return Err(Error::Shape("Fisher diagonal does not match the backbone".into()));
        }
        for (theta, fisher, anchor, grad) in [
            (model.u(), &f.u, &f.anchor_u, &mut d_u),
            (model.v(), &f.v, &f.anchor_v, &mut d_v),
        ] {
            value += accumulate(
                theta.as_slice(),
                fisher.as_slice(),
                anchor.as_slice(),
                grad.as_mut_slice(),
                lambda,
            );
        }
    }
    Ok((0.5 * lambda * value, PenaltyGradients { d_u, d_v }))
}

/// Adds `λ F (θ - θ*)` to `grad` and returns `Σ F (θ - θ*)²`. Four partial
/// sums break the dependency chain so the loop vectorizes.
fn accumulate(theta: &[f64], fisher: &[f64], anchor: &[f64], grad: &mut [f64], lambda: f64) -> f64 {
    let mut acc = [0.0; 4];
    let mut t = theta.chunks_exact(4);
    let mut f = fisher.chunks_exact(4);
    let mut a = anchor.chunks_exact(4);
    let mut g = grad.chunks_exact_mut(4);
    for (((t, f), a), g) in (&mut t).zip(&mut f).zip(&mut a).zip(&mut g) {
        for k in 0..4 {
            let diff = t[k] - a[k];
            acc[k] += f[k] * diff * diff;
            g[k] += lambda * f[k] * diff;
        }
    }
    let mut tail = 0.0;
    for (((t, f), a), g) in t.remainder().iter().zip(f.remainder()).zip(a.remainder()).zip(g.into_remainder()) {
        let diff = t - a;
        tail += f * diff * diff;
        *g += lambda * f * diff;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
