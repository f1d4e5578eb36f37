//! Mini-batch forward/backward on top of `gemm`.
//!
//! Rows of the input matrix are samples. Results agree with the per-sample
//! [`forward`](super::forward)/[`backward`](super::backward) pair up to
//! summation order; dropout masks are drawn sample by sample in the same
//! order as repeated per-sample calls would draw them.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::matrix::{gemm, Matrix, View};
use crate::nn::mlp::{loss_ce, output_error, Gradients, MlpModel, Mode};
use crate::rng::Rng;

pub struct BatchPass {
    pub head_idx: usize,
    pub pre1: Matrix,
    pub h1: Matrix,
    pub pre2: Matrix,
    pub h2: Matrix,
    pub logits: Vec<[f64; 2]>,
    /// Per-sample dropout scales, `(B × n1, B × n2)`.
    pub masks: Option<(Matrix, Matrix)>,
}

fn relu_inplace(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| {
        if *v <= 0.0 {
            *v = 0.0
        }
    });
}

/// `h1 = relu(X Uᵀ)` for every row of `x`.
pub fn hidden1_batch(model: &MlpModel, x: &Matrix) -> Result<Matrix> {
    check_input(model, x)?;
    let mut h1 = Matrix::zeros(x.rows(), model.arch().hidden1);
    gemm(1.0, x.view(), model.u().view().t(), 0.0, h1.as_mut_slice());
    relu_inplace(&mut h1);
    Ok(h1)
}

fn check_input(model: &MlpModel, x: &Matrix) -> Result<()> {
    if x.cols() != model.arch().input_dim {
        return Err(Error::Shape(format!(
            "batch has {} features, model expects {}",
            x.cols(),
            model.arch().input_dim
        )));
    }
    Ok(())
}

impl BatchPass {
    pub fn run(model: &MlpModel, head_idx: usize, x: &Matrix, mode: Mode, rng: Option<&mut Rng>) -> Result<Self> {
        check_input(model, x)?;
        let head = model.head(head_idx)?;
        let arch = *model.arch();
        let b = x.rows();

        let masks = match (mode, arch.dropout_rate > 0.0) {
            (Mode::Train, true) => {
                let rng = rng.ok_or_else(|| Error::Config("dropout in train mode needs an rng".into()))?;
                let p = arch.dropout_rate;
                let keep = 1.0 / (1.0 - p);
                let mut m1 = Matrix::zeros(b, arch.hidden1);
                let mut m2 = Matrix::zeros(b, arch.hidden2);
                for s in 0..b {
                    for v in m1.row_mut(s) {
                        *v = if rng.random::<f64>() < p { 0.0 } else { keep };
                    }
                    for v in m2.row_mut(s) {
                        *v = if rng.random::<f64>() < p { 0.0 } else { keep };
                    }
                }
                Some((m1, m2))
            }
            _ => None,
        };

        let mut pre1 = Matrix::zeros(b, arch.hidden1);
        gemm(1.0, x.view(), model.u().view().t(), 0.0, pre1.as_mut_slice());
        let mut h1 = pre1.clone();
        relu_inplace(&mut h1);
        if let Some((m1, _)) = &masks {
            h1.as_mut_slice().iter_mut().zip(m1.as_slice()).for_each(|(h, s)| *h *= s);
        }

        let mut pre2 = Matrix::zeros(b, arch.hidden2);
        gemm(1.0, h1.view(), model.v().view().t(), 0.0, pre2.as_mut_slice());
        let mut h2 = pre2.clone();
        relu_inplace(&mut h2);
        if let Some((_, m2)) = &masks {
            h2.as_mut_slice().iter_mut().zip(m2.as_slice()).for_each(|(h, s)| *h *= s);
        }

        let mut out = vec![0.0; b * 2];
        gemm(1.0, h2.view(), head.weights().view().t(), 0.0, &mut out);
        let logits = out.chunks_exact(2).map(|c| [c[0], c[1]]).collect();

        Ok(Self {
            head_idx,
            pre1,
            h1,
            pre2,
            h2,
            logits,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Pre-activation deltas `(∂L/∂pre1, ∂L/∂pre2)` per sample given the
    /// per-sample output errors `∂L/∂y1`.
    pub fn deltas(&self, model: &MlpModel, g1: &[f64]) -> Result<(Matrix, Matrix)> {
        assert_eq!(g1.len(), self.len());
        let w_hat = model.head(self.head_idx)?.equivalent();
        let arch = model.arch();
        let b = self.len();

        let mut d_pre2 = Matrix::zeros(b, arch.hidden2);
        for (s, &g) in g1.iter().enumerate() {
            let pre = self.pre2.row(s);
            let scale = self.masks.as_ref().map(|(_, m2)| m2.row(s));
            for (i, d) in d_pre2.row_mut(s).iter_mut().enumerate() {
                if pre[i] > 0.0 {
                    *d = g * w_hat.as_slice()[i] * scale.map_or(1.0, |m| m[i]);
                }
            }
        }

        let mut d_pre1 = Matrix::zeros(b, arch.hidden1);
        gemm(1.0, d_pre2.view(), model.v().view(), 0.0, d_pre1.as_mut_slice());
        for s in 0..b {
            let pre = self.pre1.row(s);
            let scale = self.masks.as_ref().map(|(m1, _)| m1.row(s));
            for (i, d) in d_pre1.row_mut(s).iter_mut().enumerate() {
                *d *= if pre[i] > 0.0 { scale.map_or(1.0, |m| m[i]) } else { 0.0 };
            }
        }
        Ok((d_pre1, d_pre2))
    }
}

struct Backprop {
    pass: BatchPass,
    loss: f64,
    g1: Vec<f64>,
    d_pre1: Matrix,
    d_pre2: Matrix,
}

fn backprop(
    model: &MlpModel,
    head_idx: usize,
    x: &Matrix,
    labels: &[u8],
    mode: Mode,
    rng: Option<&mut Rng>,
) -> Result<Backprop> {
    if labels.len() != x.rows() || labels.is_empty() {
        return Err(Error::Shape(format!("{} labels for {} samples", labels.len(), x.rows())));
    }
    let pass = BatchPass::run(model, head_idx, x, mode, rng)?;
    let mut loss = 0.0;
    let mut g1 = Vec::with_capacity(pass.len());
    for (logits, &label) in pass.logits.iter().zip(labels) {
        loss += loss_ce(*logits, label)?;
        g1.push(output_error(*logits, label)?);
    }
    let (d_pre1, d_pre2) = pass.deltas(model, &g1)?;
    Ok(Backprop {
        loss: loss / pass.len() as f64,
        pass,
        g1,
        d_pre1,
        d_pre2,
    })
}

/// Mean loss and mean gradients over the rows of `x`.
pub fn batch_gradients(
    model: &MlpModel,
    head_idx: usize,
    x: &Matrix,
    labels: &[u8],
    mode: Mode,
    rng: Option<&mut Rng>,
) -> Result<(f64, Gradients)> {
    let bp = backprop(model, head_idx, x, labels, mode, rng)?;
    let b = bp.pass.len();
    let inv_b = 1.0 / b as f64;

    let mut grads = Gradients::zeros_like(model, head_idx);
    let g_view = View::new(&bp.g1, 1, b);
    gemm(inv_b, g_view, bp.pass.h2.view(), 0.0, grads.d_w.row_mut(0));
    let row0 = grads.d_w.row(0).to_vec();
    grads.d_w.row_mut(1).iter_mut().zip(&row0).for_each(|(d, r)| *d = -r);
    gemm(inv_b, bp.d_pre2.view().t(), bp.pass.h1.view(), 0.0, grads.d_v.as_mut_slice());
    gemm(inv_b, bp.d_pre1.view().t(), x.view(), 0.0, grads.d_u.as_mut_slice());

    Ok((bp.loss, grads))
}

/// One plain SGD step on the mean loss over the rows of `x`, accumulated
/// straight into the weights without materializing gradients. Same update
/// as [`batch_gradients`] followed by [`sgd_step`](super::sgd_step) up to
/// rounding. Returns the mean loss. Nothing is modified unless every factor
/// of the update is finite; a frozen head is left untouched.
pub fn sgd_batch_step(
    model: &mut MlpModel,
    head_idx: usize,
    x: &Matrix,
    labels: &[u8],
    mode: Mode,
    rng: Option<&mut Rng>,
    lr: f64,
) -> Result<f64> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
    }
    let bp = backprop(model, head_idx, x, labels, mode, rng)?;
    let finite = bp.loss.is_finite()
        && bp.g1.iter().all(|g| g.is_finite())
        && x.is_finite()
        && bp.pass.h1.is_finite()
        && bp.pass.h2.is_finite()
        && bp.d_pre1.is_finite()
        && bp.d_pre2.is_finite();
    if !finite {
        return Err(Error::Numeric("non-finite gradient, step aborted".into()));
    }
    let b = bp.pass.len();
    let step = lr / b as f64;
    let g_view = View::new(&bp.g1, 1, b);

    let head = model.head_mut(head_idx)?;
    if !head.is_frozen() {
        let w = head.weights_mut()?;
        gemm(-step, g_view, bp.pass.h2.view(), 1.0, w.row_mut(0));
        gemm(step, g_view, bp.pass.h2.view(), 1.0, w.row_mut(1));
    }
    gemm(-step, bp.d_pre2.view().t(), bp.pass.h1.view(), 1.0, model.v_mut().as_mut_slice());
    gemm(-step, bp.d_pre1.view().t(), x.view(), 1.0, model.u_mut().as_mut_slice());
    Ok(bp.loss)
}

/// Eval-mode logits for every row of `x`.
pub fn batch_logits(model: &MlpModel, head_idx: usize, x: &Matrix) -> Result<Vec<[f64; 2]>> {
    Ok(BatchPass::run(model, head_idx, x, Mode::Eval, None)?.logits)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::classifiers::new_random_head;
    use crate::nn::mlp::{backward, forward, init_mlp, Architecture};
    use crate::rng::rng_from_seed;

    fn setup(dropout: f64) -> (MlpModel, Matrix, Vec<u8>) {
        let mut m = init_mlp(Architecture::new(7, 6, 5).with_dropout(dropout), 11).unwrap();
        m.push_head(new_random_head(5, 3).unwrap()).unwrap();
        m.push_head(new_random_head(5, 4).unwrap()).unwrap();
        let mut rng = rng_from_seed(5);
        let x = Matrix::from_fn(9, 7, |_, _| rng.random::<f64>());
        let labels = (0..9).map(|i| (i % 2) as u8).collect();
        (m, x, labels)
    }

    fn per_sample_mean(m: &MlpModel, x: &Matrix, labels: &[u8], mode: Mode, mut rng: Option<&mut Rng>) -> (f64, Gradients) {
        let mut acc = Gradients::zeros_like(m, 1);
        let mut loss = 0.0;
        for s in 0..x.rows() {
            let t = forward(m, 1, x.row(s), mode, rng.as_deref_mut()).unwrap();
            loss += loss_ce(t.logits, labels[s]).unwrap();
            let g = backward(m, 1, &t, labels[s]).unwrap();
            acc.d_u.add_scaled(1.0, &g.d_u);
            acc.d_v.add_scaled(1.0, &g.d_v);
            acc.d_w.add_scaled(1.0, &g.d_w);
        }
        let n = x.rows() as f64;
        acc.d_u.scale(1.0 / n);
        acc.d_v.scale(1.0 / n);
        acc.d_w.scale(1.0 / n);
        (loss / n, acc)
    }

    fn close(a: &Matrix, b: &Matrix) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-13 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn batch_matches_mean_of_per_sample() {
        let (m, x, labels) = setup(0.0);
        let (lb, gb) = batch_gradients(&m, 1, &x, &labels, Mode::Train, None).unwrap();
        let (ls, gs) = per_sample_mean(&m, &x, &labels, Mode::Train, None);
        assert!((lb - ls).abs() < 1e-13);
        close(&gb.d_u, &gs.d_u);
        close(&gb.d_v, &gs.d_v);
        close(&gb.d_w, &gs.d_w);
    }

    #[test]
    fn batch_dropout_matches_per_sample_stream() {
        let (m, x, labels) = setup(0.3);
        let mut r1 = rng_from_seed(42);
        let mut r2 = rng_from_seed(42);
        let (_, gb) = batch_gradients(&m, 1, &x, &labels, Mode::Train, Some(&mut r1)).unwrap();
        let (_, gs) = per_sample_mean(&m, &x, &labels, Mode::Train, Some(&mut r2));
        close(&gb.d_u, &gs.d_u);
        close(&gb.d_v, &gs.d_v);
        close(&gb.d_w, &gs.d_w);
    }

    #[test]
    fn eval_logits_match_forward() {
        let (m, x, _) = setup(0.5);
        let logits = batch_logits(&m, 0, &x).unwrap();
        for s in 0..x.rows() {
            let t = forward(&m, 0, x.row(s), Mode::Eval, None).unwrap();
            assert!((t.logits[0] - logits[s][0]).abs() < 1e-14);
            assert!((t.logits[1] - logits[s][1]).abs() < 1e-14);
        }
        let h1 = hidden1_batch(&m, &x).unwrap();
        let t = forward(&m, 0, x.row(3), Mode::Eval, None).unwrap();
        for (a, b) in h1.row(3).iter().zip(&t.h1) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fused_step_matches_gradients_then_step() {
        for dropout in [0.0, 0.3] {
            let (m, x, labels) = setup(dropout);
            let mut fused = m.clone();
            let mut plain = m.clone();
            let (mut r1, mut r2) = (rng_from_seed(8), rng_from_seed(8));
            let lf = sgd_batch_step(&mut fused, 1, &x, &labels, Mode::Train, Some(&mut r1), 0.3).unwrap();
            let (lp, g) = batch_gradients(&plain, 1, &x, &labels, Mode::Train, Some(&mut r2)).unwrap();
            crate::nn::sgd_step(&mut plain, &g, 0.3).unwrap();
            assert_eq!(lf, lp);
            close(fused.u(), plain.u());
            close(fused.v(), plain.v());
            close(fused.head(1).unwrap().weights(), plain.head(1).unwrap().weights());
            assert_eq!(fused.head(0).unwrap().weights(), m.head(0).unwrap().weights());
        }
    }

    #[test]
    fn fused_step_skips_frozen_head_and_rejects_bad_input() {
        let (mut m, mut x, labels) = setup(0.0);
        m.head_mut(1).unwrap().freeze();
        let before = m.clone();
        sgd_batch_step(&mut m, 1, &x, &labels, Mode::Train, None, 0.3).unwrap();
        assert_eq!(m.head(1).unwrap().weights(), before.head(1).unwrap().weights());
        assert_ne!(m.u(), before.u());

        let snapshot = m.clone();
        x.set(2, 3, f64::NAN);
        assert!(sgd_batch_step(&mut m, 1, &x, &labels, Mode::Train, None, 0.3).is_err());
        assert!(matches!(
            sgd_batch_step(&mut m, 1, &x, &labels, Mode::Train, None, 0.0),
            Err(Error::Config(_))
        ));
        assert_eq!(m, snapshot);
    }

    #[test]
    fn rejects_mismatched_labels() {
        let (m, x, _) = setup(0.0);
        assert!(batch_gradients(&m, 0, &x, &[0, 1], Mode::Eval, None).is_err());
    }
}
