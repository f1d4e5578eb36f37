//! Per-task heads, the equivalent one-class classifier and column
//! rearrangement.
//!
//! For a two-way head `W = [w1 w2]ᵀ` the decision statistic is
//! `y1 - y2 = (w1 - w2)·h2`, so the head acts like the single vector
//! `ŵ = w1 - w2`. [`rearrange`] permutes the columns of a fresh head so that
//! its `ŵ` becomes close to orthogonal to the previous task's `ŵ` without
//! changing the multiset of entries.

use std::io::Write;

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::{dot, norm, Matrix};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    w: Matrix,
    frozen: bool,
    task_id: usize,
}

impl Head {
    /// Wraps a `2 × n2` weight matrix.
    ///
    /// # Panics
    /// If `w` does not have exactly two rows.
    pub fn from_weights(w: Matrix) -> Self {
        assert_eq!(w.rows(), 2, "a head has exactly two rows");
        Self {
            w,
            frozen: false,
            task_id: 0,
        }
    }

    pub fn with_task_id(mut self, task_id: usize) -> Self {
        self.task_id = task_id;
        self
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn width(&self) -> usize {
        self.w.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn weights_mut(&mut self) -> Result<&mut Matrix> {
        if self.frozen {
            Err(Error::FrozenHead(self.task_id))
        } else {
            Ok(&mut self.w)
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Idempotent.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn equivalent(&self) -> EquivalentClassifier {
        equivalent(self)
    }
}

pub fn new_random_head(n2: usize, seed: u64) -> Result<Head> {
    if n2 == 0 {
        return Err(Error::InvalidArchitecture("head width must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, Stream::Head, &[]);
    let bound = 1.0 / (n2 as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Ok(Head::from_weights(Matrix::from_fn(2, n2, |_, _| dist.sample(&mut rng))))
}

pub fn freeze(head: &mut Head) {
    head.freeze();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalentClassifier {
    pub w_hat: Vec<f64>,
}

impl EquivalentClassifier {
    pub fn as_slice(&self) -> &[f64] {
        &self.w_hat
    }

    pub fn norm(&self) -> f64 {
        norm(&self.w_hat)
    }

    /// `ŷ = ŵ·h2`
    pub fn predict(&self, h2: &[f64]) -> f64 {
        dot(&self.w_hat, h2)
    }
}

/// `ŵ = w1 - w2`
pub fn equivalent(head: &Head) -> EquivalentClassifier {
    let w = head.weights();
    EquivalentClassifier {
        w_hat: w.row(0).iter().zip(w.row(1)).map(|(a, b)| a - b).collect(),
    }
}

/// Signed `(ŵ^B)ᵀ ŵ^A`.
pub fn dot_equiv(head_b: &Head, head_a: &Head) -> Result<f64> {
    check_widths(head_b, head_a)?;
    Ok(dot(equivalent(head_b).as_slice(), equivalent(head_a).as_slice()))
}

fn check_widths(head_b: &Head, head_a: &Head) -> Result<()> {
    if head_b.width() != head_a.width() {
        return Err(Error::Shape(format!(
            "head widths differ: {} vs {}",
            head_b.width(),
            head_a.width()
        )));
    }
    Ok(())
}

/// Index pools of the swap walk, with `a = ŵ^A` and `b = ŵ^B`:
/// `s1: a<0,b<0`, `s2: a>0,b>0`, `d1: a<0,b>0`, `d2: a>0,b<0`.
/// Zero entries belong to no pool.
#[derive(Debug, Clone, PartialEq)]
pub struct RearrangeState {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    pub d1: Vec<usize>,
    pub d2: Vec<usize>,
    /// Current signed dot product.
    pub c: f64,
    /// Best `|c|` seen so far.
    pub c_opt: f64,
    pub m1: usize,
    pub m2: usize,
    pub k1: usize,
    pub k2: usize,
}

impl RearrangeState {
    pub fn new(a: &[f64], b: &[f64]) -> Self {
        let (mut s1, mut s2, mut d1, mut d2) = (vec![], vec![], vec![], vec![]);
        for (i, (&ai, &bi)) in a.iter().zip(b).enumerate() {
            match (ai < 0.0, ai > 0.0, bi < 0.0, bi > 0.0) {
                (true, _, true, _) => s1.push(i),
                (_, true, _, true) => s2.push(i),
                (true, _, _, true) => d1.push(i),
                (_, true, true, _) => d2.push(i),
                _ => {}
            }
        }
        let c = dot(a, b);
        Self {
            k1: s1.len().min(s2.len()),
            k2: d1.len().min(d2.len()),
            s1,
            s2,
            d1,
            d2,
            c,
            c_opt: c.abs(),
            m1: 0,
            m2: 0,
        }
    }

    /// Next pair to exchange, or `None` once the pool that would move `c`
    /// toward zero is exhausted (or `c` is already zero).
    ///
    /// `c > 0`: exchanging `i ∈ s1, j ∈ s2` changes `c` by
    /// `(a_i - a_j)(b_j - b_i) < 0`. `c < 0`: exchanging `i ∈ d1, j ∈ d2`
    /// changes it by a positive amount.
    pub fn next_pair(&mut self) -> Option<(usize, usize)> {
        if self.c > 0.0 && self.m1 < self.k1 {
            let pair = (self.s1[self.m1], self.s2[self.m1]);
            self.m1 += 1;
            Some(pair)
        } else if self.c < 0.0 && self.m2 < self.k2 {
            let pair = (self.d1[self.m2], self.d2[self.m2]);
            self.m2 += 1;
            Some(pair)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapStep {
    pub step: usize,
    pub swapped_i: usize,
    pub swapped_j: usize,
    pub signed_dot: f64,
}

/// Column rearrangement of `head_b` against `head_a`.
///
/// Walks greedy pair swaps (see [`RearrangeState::next_pair`]), re-evaluating
/// the signed dot after each one, and returns the visited arrangement with the
/// smallest `|dot|`. The same permutation is applied to both rows, so the
/// column multiset and `‖ŵ^B‖` are unchanged.
pub fn rearrange(head_b: &Head, head_a: &Head) -> Result<Head> {
    rearrange_traced(head_b, head_a).map(|(h, _)| h)
}

pub fn rearrange_traced(head_b: &Head, head_a: &Head) -> Result<(Head, Vec<SwapStep>)> {
    check_widths(head_b, head_a)?;
    if head_b.is_frozen() {
        return Err(Error::FrozenHead(head_b.task_id()));
    }
    let a = equivalent(head_a).w_hat;
    let mut b = equivalent(head_b).w_hat;
    let mut state = RearrangeState::new(&a, &b);

    let mut current = head_b.clone();
    let mut best = head_b.clone();
    let mut trace = Vec::new();

    while let Some((i, j)) = state.next_pair() {
        current.w.swap_cols(i, j);
        b.swap(i, j);
        state.c = dot(&a, &b);
        trace.push(SwapStep {
            step: trace.len() + 1,
            swapped_i: i,
            swapped_j: j,
            signed_dot: state.c,
        });
        if state.c.abs() < state.c_opt {
            state.c_opt = state.c.abs();
            best.w = current.w.clone();
        }
    }
    Ok((best, trace))
}

/// CSV with header `step,swapped_i,swapped_j,signed_dot`.
pub fn write_swap_trace<W: Write>(out: W, trace: &[SwapStep]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for step in trace {
        w.serialize(step)?;
    }
    w.flush()?;
    Ok(())
}
