//! Three-layer MLP with one linear two-way head per task.
//!
//! ```text
//! h1 = relu(U x)      U: n1 × m
//! h2 = relu(V h1)     V: n2 × n1
//! y  = W h2           W: 2 × n2   (one per task, no output activation)
//! ```
//!
//! There are no bias terms. Dropout, when enabled, is inverted dropout on
//! `h1` and `h2` in [`Mode::Train`] only.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::classifiers::Head;
use crate::error::{Error, Result};
use crate::nn::matrix::{axpy, dot, Matrix};
use crate::rng::{stream_rng, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden1: usize, hidden2: usize) -> Self {
        Self {
            input_dim,
            hidden1,
            hidden2,
            dropout_rate: 0.0,
        }
    }

    /// 784 → 256 → 256, used for MNIST and Fashion-MNIST.
    pub fn mnist() -> Self {
        Self::new(784, 256, 256)
    }

    /// 3072 → 2000 → 2000, used for CIFAR-10.
    pub fn cifar10() -> Self {
        Self::new(3072, 2000, 2000)
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "all dimensions must be >= 1, got {}x{}x{}",
                self.input_dim, self.hidden1, self.hidden2
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArchitecture(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Predicted class under the sign rule on `y1 - y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    One,
    Two,
}

impl Class {
    /// Binary label 0 is class 1, label 1 is class 2.
    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            0 => Ok(Class::One),
            1 => Ok(Class::Two),
            other => Err(Error::InvalidLabel(other)),
        }
    }

    pub fn label(self) -> u8 {
        match self {
            Class::One => 0,
            Class::Two => 1,
        }
    }
}

/// Class 1 iff `y1 - y2 > 0`. Ties (and NaN) fall to class 2.
pub fn predict(logits: [f64; 2]) -> Class {
    if logits[0] - logits[1] > 0.0 {
        Class::One
    } else {
        Class::Two
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: Architecture,
    u: Matrix,
    v: Matrix,
    heads: Vec<Head>,
}

pub fn init_mlp(arch: Architecture, seed: u64) -> Result<MlpModel> {
    arch.validate()?;
    let mut rng = stream_rng(seed, Stream::Init, &[]);
    let u = uniform_fan_in(arch.hidden1, arch.input_dim, &mut rng);
    let v = uniform_fan_in(arch.hidden2, arch.hidden1, &mut rng);
    Ok(MlpModel {
        arch,
        u,
        v,
        heads: Vec::new(),
    })
}

/// Entries i.i.d. uniform on `[-1/√cols, 1/√cols]`.
pub(crate) fn uniform_fan_in(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

impl MlpModel {
    pub fn from_parts(arch: Architecture, u: Matrix, v: Matrix, heads: Vec<Head>) -> Result<Self> {
        arch.validate()?;
        if u.shape() != (arch.hidden1, arch.input_dim) {
            return Err(Error::Shape(format!("U is {:?}, architecture wants {:?}", u.shape(), (arch.hidden1, arch.input_dim))));
        }
        if v.shape() != (arch.hidden2, arch.hidden1) {
            return Err(Error::Shape(format!("V is {:?}, architecture wants {:?}", v.shape(), (arch.hidden2, arch.hidden1))));
        }
        let mut model = Self {
            arch,
            u,
            v,
            heads: Vec::with_capacity(heads.len()),
        };
        for h in heads {
            model.push_head(h)?;
        }
        Ok(model)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let arch = self.arch.with_dropout(rate);
        arch.validate()?;
        self.arch = arch;
        Ok(())
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn u_mut(&mut self) -> &mut Matrix {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut Matrix {
        &mut self.v
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn head(&self, idx: usize) -> Result<&Head> {
        self.heads
            .get(idx)
            .ok_or_else(|| Error::Shape(format!("head {idx} requested, model has {}", self.heads.len())))
    }

    pub fn head_mut(&mut self, idx: usize) -> Result<&mut Head> {
        let n = self.heads.len();
        self.heads
            .get_mut(idx)
            .ok_or_else(|| Error::Shape(format!("head {idx} requested, model has {n}")))
    }

    pub fn push_head(&mut self, head: Head) -> Result<usize> {
        if head.width() != self.arch.hidden2 {
            return Err(Error::Shape(format!(
                "head width {} does not match hidden2 {}",
                head.width(),
                self.arch.hidden2
            )));
        }
        self.heads.push(head);
        Ok(self.heads.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// Per-unit scale: 0 for dropped units, `1/(1-p)` for kept ones.
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub head_idx: usize,
    pub x: Vec<f64>,
    pub pre1: Vec<f64>,
    pub h1: Vec<f64>,
    pub pre2: Vec<f64>,
    pub h2: Vec<f64>,
    pub logits: [f64; 2],
    pub masks: Option<DropoutMasks>,
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn dropout_mask(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn forward(
    model: &MlpModel,
    head_idx: usize,
    x: &[f64],
    mode: Mode,
    rng: Option<&mut Rng>,
) -> Result<ForwardTrace> {
    let head = model.head(head_idx)?;
    if x.len() != model.arch.input_dim {
        return Err(Error::Shape(format!(
            "input of length {} for input_dim {}",
            x.len(),
            model.arch.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input".into()));
    }
    let masks = match (mode, model.arch.dropout_rate > 0.0) {
        (Mode::Train, true) => {
            let rng = rng.ok_or_else(|| Error::Config("dropout in train mode needs an rng".into()))?;
            let rate = model.arch.dropout_rate;
            let h1 = dropout_mask(model.arch.hidden1, rate, rng);
            let h2 = dropout_mask(model.arch.hidden2, rate, rng);
            Some(DropoutMasks { h1, h2 })
        }
        _ => None,
    };

    let pre1 = model.u.matvec(x)?;
    let mut h1: Vec<f64> = pre1.iter().copied().map(relu).collect();
    if let Some(m) = &masks {
        h1.iter_mut().zip(&m.h1).for_each(|(h, s)| *h *= s);
    }
    let pre2 = model.v.matvec(&h1)?;
    let mut h2: Vec<f64> = pre2.iter().copied().map(relu).collect();
    if let Some(m) = &masks {
        h2.iter_mut().zip(&m.h2).for_each(|(h, s)| *h *= s);
    }
    let w = head.weights();
    let logits = [dot(w.row(0), &h2), dot(w.row(1), &h2)];

    Ok(ForwardTrace {
        head_idx,
        x: x.to_vec(),
        pre1,
        h1,
        pre2,
        h2,
        logits,
        masks,
    })
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_logits(logits: [f64; 2]) -> Result<()> {
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite logits {logits:?}")))
    }
}

/// Softmax cross-entropy `-ln softmax(logits)[label]`.
pub fn loss_ce(logits: [f64; 2], label: u8) -> Result<f64> {
    Class::from_label(label)?;
    check_logits(logits)?;
    let (own, other) = if label == 0 {
        (logits[0], logits[1])
    } else {
        (logits[1], logits[0])
    };
    Ok(softplus(other - own))
}

/// `∂L/∂y1`. For two-way softmax cross-entropy `∂L/∂y2 = -∂L/∂y1`.
pub fn output_error(logits: [f64; 2], label: u8) -> Result<f64> {
    Class::from_label(label)?;
    check_logits(logits)?;
    // σ(y1 - y2) - 1 written as -σ(y2 - y1) to avoid cancellation.
    Ok(if label == 0 {
        -sigmoid(logits[1] - logits[0])
    } else {
        sigmoid(logits[0] - logits[1])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub head_idx: usize,
    pub d_u: Matrix,
    pub d_v: Matrix,
    pub d_w: Matrix,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel, head_idx: usize) -> Self {
        let a = model.arch;
        Self {
            head_idx,
            d_u: Matrix::zeros(a.hidden1, a.input_dim),
            d_v: Matrix::zeros(a.hidden2, a.hidden1),
            d_w: Matrix::zeros(2, a.hidden2),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_u.is_finite() && self.d_v.is_finite() && self.d_w.is_finite()
    }
}

/// `∇_{h2} L = (∂L/∂y1) · ŵ`, the gradient reaching the second hidden layer.
pub fn hidden2_gradient(model: &MlpModel, trace: &ForwardTrace, label: u8) -> Result<Vec<f64>> {
    let g1 = output_error(trace.logits, label)?;
    let w_hat = model.head(trace.head_idx)?.equivalent();
    Ok(w_hat.as_slice().iter().map(|w| g1 * w).collect())
}

fn check_trace(model: &MlpModel, head_idx: usize, trace: &ForwardTrace) -> Result<()> {
    let a = model.arch;
    let ok = trace.head_idx == head_idx
        && trace.x.len() == a.input_dim
        && trace.pre1.len() == a.hidden1
        && trace.h1.len() == a.hidden1
        && trace.pre2.len() == a.hidden2
        && trace.h2.len() == a.hidden2;
    if ok {
        Ok(())
    } else {
        Err(Error::Shape("forward trace does not match this model/head".into()))
    }
}

pub fn backward(model: &MlpModel, head_idx: usize, trace: &ForwardTrace, label: u8) -> Result<Gradients> {
    check_trace(model, head_idx, trace)?;
    let g1 = output_error(trace.logits, label)?;
    let mut grads = Gradients::zeros_like(model, head_idx);

    axpy(g1, &trace.h2, grads.d_w.row_mut(0));
    axpy(-g1, &trace.h2, grads.d_w.row_mut(1));

    let mut d_pre2 = hidden2_gradient(model, trace, label)?;
    for (i, d) in d_pre2.iter_mut().enumerate() {
        let scale = trace.masks.as_ref().map_or(1.0, |m| m.h2[i]);
        *d *= if trace.pre2[i] > 0.0 { scale } else { 0.0 };
    }
    grads.d_v.add_outer(1.0, &d_pre2, &trace.h1);

    let mut d_pre1 = model.v.transpose_matvec(&d_pre2)?;
    for (i, d) in d_pre1.iter_mut().enumerate() {
        let scale = trace.masks.as_ref().map_or(1.0, |m| m.h1[i]);
        *d *= if trace.pre1[i] > 0.0 { scale } else { 0.0 };
    }
    grads.d_u.add_outer(1.0, &d_pre1, &trace.x);
    Ok(grads)
}

/// Plain SGD: `θ ← θ - lr·∇θ` for U, V and the gradient's head. A frozen
/// head is left untouched. Nothing is modified if any gradient entry is
/// non-finite.
pub fn sgd_step(model: &mut MlpModel, grads: &Gradients, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
    }
    let a = model.arch;
    if grads.d_u.shape() != (a.hidden1, a.input_dim)
        || grads.d_v.shape() != (a.hidden2, a.hidden1)
        || grads.d_w.shape() != (2, a.hidden2)
    {
        return Err(Error::Shape("gradient shapes do not match model".into()));
    }
    model.head(grads.head_idx)?;
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient, step aborted".into()));
    }
    model.u.add_scaled(-lr, &grads.d_u);
    model.v.add_scaled(-lr, &grads.d_v);
    let head = &mut model.heads[grads.head_idx];
    if !head.is_frozen() {
        head.weights_mut()?.add_scaled(-lr, &grads.d_w);
    }
    Ok(())
}
