//! Parameter initialization and the small building blocks shared by both
//! backbones.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng;

/// Seeded parameter factory; every tensor draws from its own named stream.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    seed: u64,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self { store, seed }
    }

    fn stream(&self, name: &str) -> ChaCha8Rng {
        rng::stream(self.seed, "init", &[rng::hash_str(name)])
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let mut r = self.stream(name);
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut r)).collect();
        self.store.add(name, Tensor::matrix(rows, cols, data))
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, lo: f64, hi: f64) -> ParamId {
        let mut r = self.stream(name);
        let data = (0..rows * cols).map(|_| r.random_range(lo..hi)).collect();
        self.store.add(name, Tensor::matrix(rows, cols, data))
    }

    pub fn fill(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        self.store.add(name, Tensor::full(&[rows, cols], v))
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        self.linear_scaled(name, fan_in, fan_out, 1.0)
    }

    pub fn linear_scaled(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Linear {
        Linear {
            w: self.normal(&format!("{name}.w"), fan_in, fan_out, gain / (fan_in as f64).sqrt()),
            b: self.fill(&format!("{name}.b"), 1, fan_out, 0.0),
        }
    }
}

/// `x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, p[self.w])?;
        tape.add(xw, p[self.b])
    }
}

/// Two-layer GELU MLP.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            l1: init.linear(&format!("{name}.fc1"), d_in, hidden),
            l2: init.linear(&format!("{name}.fc2"), hidden, d_out),
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.l1.apply(tape, p, x)?;
        let h = tape.gelu(h);
        self.l2.apply(tape, p, h)
    }
}

/// Residual bottleneck `h + W_up GELU(W_down (h + e_g) + b_down) + b_up`.
/// Holds `2 d r + d + r` parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Adapter {
    pub down: Linear,
    pub up: Linear,
}

impl Adapter {
    pub fn new(init: &mut Init, name: &str, d: usize, r: usize) -> Self {
        Self {
            down: init.linear(&format!("{name}.down"), d, r),
            up: init.linear_scaled(&format!("{name}.up"), r, d, 0.1),
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, h: Var, signal: Option<Var>) -> Result<Var> {
        let x = match signal {
            Some(g) => tape.add(h, g)?,
            None => h,
        };
        let z = self.down.apply(tape, p, x)?;
        let z = tape.gelu(z);
        let z = self.up.apply(tape, p, z)?;
        tape.add(h, z)
    }
}

/// Output heads: a linear increment for the normalized counts and a latent
/// whose clamped square is the treatment intensity.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Heads {
    pub y: Linear,
    pub latent: Linear,
}

impl Heads {
    pub fn new(init: &mut Init, d: usize) -> Self {
        let y = init.linear_scaled("head.y", d, crate::timeline::DIMS, 0.1);
        let latent = Linear {
            w: init.normal("head.latent.w", d, 1, 0.1 / (d as f64).sqrt()),
            b: init.fill("head.latent.b", 1, 1, 0.5),
        };
        Self { y, latent }
    }

    /// `(increment, latent, lambda)` for hidden states `h`.
    pub fn apply(&self, tape: &mut Tape, p: &Bound, h: Var) -> Result<(Var, Var, Var)> {
        let inc = self.y.apply(tape, p, h)?;
        let latent = self.latent.apply(tape, p, h)?;
        let sq = tape.square(latent);
        let lambda = tape.clamp(sq, 0.0, 1.0);
        Ok((inc, latent, lambda))
    }
}

/// Row permutation `[0, n, 1, n+1, ...]` that interleaves two stacked blocks.
pub(crate) fn interleave_order(n: usize) -> Vec<usize> {
    (0..n).flat_map(|j| [j, n + j]).collect()
}

/// Large negative logit used to exclude future positions from attention.
pub(crate) const MASKED: f64 = -1e9;

/// Additive attention mask over positions with times `t` (days): causal, plus
/// `-beta |t_i - t_j|` when `beta > 0`.
pub(crate) fn attention_mask(t: &[f64], beta: f64) -> Tensor {
    let n = t.len();
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let v = if j > i { MASKED } else { -beta * (t[i] - t[j]).abs() };
            m.set(i, j, v);
        }
    }
    m
}
