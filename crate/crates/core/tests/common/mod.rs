#![allow(dead_code, clippy::needless_range_loop)]

use frcr::classifiers::new_random_head;
use frcr::nn::{backward, forward, init_mlp, Architecture, MlpModel, Mode};
use frcr::rng::rng_from_seed;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
/// Pre-activations closer than this to zero could cross the ReLU kink
/// under a finite-difference step.
pub const KINK_MARGIN: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Small random model with one head plus an input and label, all drawn
/// from `seed`. Redraws until no pre-activation sits near a kink.
pub fn random_case(seed: u64) -> (MlpModel, Vec<f64>, u8) {
    let mut rng = rng_from_seed(seed);
    loop {
        let arch = Architecture::new(rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
        let mut model = init_mlp(arch, rng.random()).unwrap();
        model.push_head(new_random_head(arch.hidden2, rng.random()).unwrap()).unwrap();
        let x: Vec<f64> = (0..arch.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = rng.random_range(0..2u8);
        let t = forward(&model, 0, &x, Mode::Eval, None).unwrap();
        if t.pre1.iter().chain(&t.pre2).all(|p| p.abs() > KINK_MARGIN) {
            return (model, x, label);
        }
    }
}

/// Double-double number: `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul_f64(self, b: f64) -> Dd {
        let p = self.hi * b;
        let e = self.hi.mul_add(b, -p) + self.lo * b;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

fn dd_layer(m: &frcr::nn::Matrix, input: &[Dd], relu: bool) -> Vec<Dd> {
    (0..m.rows())
        .map(|r| {
            let mut s = Dd::ZERO;
            for (c, v) in input.iter().enumerate() {
                s = s.add(v.mul_f64(m.get(r, c)));
            }
            if relu && s.hi <= 0.0 {
                Dd::ZERO
            } else {
                s
            }
        })
        .collect()
}

/// `y_other - y_own` in double-double precision.
fn dd_margin(model: &MlpModel, x: &[f64], label: u8) -> Dd {
    let x: Vec<Dd> = x.iter().map(|v| Dd::from(*v)).collect();
    let h1 = dd_layer(model.u(), &x, true);
    let h2 = dd_layer(model.v(), &h1, true);
    let y = dd_layer(model.head(0).unwrap().weights(), &h2, false);
    if label == 0 {
        y[1].sub(y[0])
    } else {
        y[0].sub(y[1])
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `softplus(a) - softplus(b)` from `b` and `d = a - b` without
/// cancellation: `ln(1 + σ(b)·expm1(d))`.
pub fn softplus_diff(b: f64, d: f64) -> f64 {
    (sigmoid(b) * d.exp_m1()).ln_1p()
}

/// Central difference of the loss along one parameter. The two margins are
/// evaluated in double-double so rounding in the forward pass cannot swamp
/// small gradients.
fn central_difference(model: &MlpModel, x: &[f64], label: u8, which: usize, idx: usize) -> f64 {
    let at = |delta: f64| {
        let mut m = model.clone();
        let slot = match which {
            0 => &mut m.u_mut().as_mut_slice()[idx],
            1 => &mut m.v_mut().as_mut_slice()[idx],
            _ => &mut m.head_mut(0).unwrap().weights_mut().unwrap().as_mut_slice()[idx],
        };
        *slot += delta;
        let theta = *slot;
        (dd_margin(&m, x, label), theta)
    };
    let (m_plus, t_plus) = at(FD_STEP);
    let (m_minus, t_minus) = at(-FD_STEP);
    let step = Dd::from(t_plus).sub(Dd::from(t_minus)).to_f64();
    softplus_diff(m_minus.to_f64(), m_plus.sub(m_minus).to_f64()) / step
}

/// Largest relative error between `backward` and central differences over
/// every entry of U, V and W.
pub fn max_gradient_error(model: &MlpModel, x: &[f64], label: u8) -> f64 {
    let trace = forward(model, 0, x, Mode::Eval, None).unwrap();
    let g = backward(model, 0, &trace, label).unwrap();
    let mut worst: f64 = 0.0;
    for (which, grads) in [g.d_u.as_slice(), g.d_v.as_slice(), g.d_w.as_slice()].into_iter().enumerate() {
        for (i, &analytic) in grads.iter().enumerate() {
            let fd = central_difference(model, x, label, which, i);
            worst = worst.max(rel_err(fd, analytic));
        }
    }
    worst
}

/// Loss computed independently of the library.
pub fn reference_loss(model: &MlpModel, x: &[f64], label: u8) -> f64 {
    let m = dd_margin(model, x, label).to_f64();
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

/// Triple-loop forward pass independent of the library's linear algebra.
pub fn naive_logits(model: &MlpModel, head: usize, x: &[f64]) -> [f64; 2] {
    let layer = |m: &frcr::nn::Matrix, input: &[f64], relu: bool| -> Vec<f64> {
        (0..m.rows())
            .map(|r| {
                let mut s = 0.0;
                for c in 0..m.cols() {
                    s += m.get(r, c) * input[c];
                }
                if relu && s < 0.0 {
                    0.0
                } else {
                    s
                }
            })
            .collect()
    };
    let h1 = layer(model.u(), x, true);
    let h2 = layer(model.v(), &h1, true);
    let y = layer(model.head(head).unwrap().weights(), &h2, false);
    [y[0], y[1]]
}
