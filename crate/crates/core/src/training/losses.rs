use rand::Rng;

use crate::backbones::Aux;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng;

/// Bandwidth of the attention-consistency kernel, in days.
pub const ATT_SIGMA_DAYS: f64 = 1.0;

/// The three parts of the joint objective as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub total: Var,
    pub mse: Var,
    pub bce: Var,
}

/// `MSE(Y) + alpha * BCE(lambda, A)` over the rows selected by `mask`.
pub fn joint_loss(
    tape: &mut Tape,
    y_pred: Var,
    y_true: &Tensor,
    lambda: Var,
    a_true: &Tensor,
    alpha: f64,
    mask: Option<&[bool]>,
) -> Result<JointLoss> {
    let mse = tape.mse(y_pred, y_true, mask)?;
    let bce = tape.bce(lambda, a_true, mask)?;
    let weighted = tape.scale(bce, alpha);
    let total = tape.add(mse, weighted)?;
    Ok(JointLoss { total, mse, bce })
}

/// Mean over layers and consecutive steps of `||h_{j+1} - A_bar_{j+1} h_j||^2`,
/// where `A_bar_{j+1}` is the recorded transition that produced `h_{j+1}`.
pub fn temporal_coherence(tape: &mut Tape, aux: &Aux) -> Result<Var> {
    let Aux::Ssm { traces } = aux else {
        return Err(Error::Contract("temporal coherence needs the ssm backbone".into()));
    };
    let mut terms = Vec::with_capacity(traces.len());
    for tr in traces {
        let m = tape.value(tr.hidden).rows();
        if m < 2 {
            continue;
        }
        let next = tape.slice_rows(tr.hidden, 1, m - 1)?;
        let prev = tape.slice_rows(tr.hidden, 0, m - 1)?;
        let a = tape.slice_rows(tr.transition, 1, m - 1)?;
        let carried = tape.mul(a, prev)?;
        let d = tape.sub(next, carried)?;
        let d = tape.square(d);
        let s = tape.sum(d);
        terms.push(tape.scale(s, 1.0 / (m - 1) as f64));
    }
    mean_of(tape, terms)
}

fn mean_of(tape: &mut Tape, terms: Vec<Var>) -> Result<Var> {
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let n = terms.len() as f64;
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / n))
}

/// Causal attention pairs `(i, j)` with `j <= i` as flat indices into an
/// `n x n` map, together with their time separations `t_i - t_j`.
fn causal_pairs(times: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let n = times.len();
    let mut idx = Vec::with_capacity(n * (n + 1) / 2);
    let mut dt = Vec::with_capacity(idx.capacity());
    for i in 0..n {
        for j in 0..=i {
            idx.push(i * n + j);
            dt.push(times[i] - times[j]);
        }
    }
    (idx, dt)
}

fn kernel(a: f64, b: f64, sigma: f64) -> f64 {
    (-(a - b).powi(2) / (sigma * sigma)).exp()
}

/// Monte-Carlo attention consistency: for each attention map, `budget`
/// pair-of-pairs drawn uniformly with replacement from the causal pairs, each
/// contributing `w (A_ij - A_kl)^2` with `w = exp(-(dt_ij - dt_kl)^2 / sigma^2)`.
/// The result averages over samples and maps, so its expectation is the full
/// weighted sum divided by the squared number of causal pairs.
pub fn attention_consistency(tape: &mut Tape, aux: &Aux, budget: usize, seed: u64) -> Result<Var> {
    let Aux::Attention { maps, times } = aux else {
        return Err(Error::Contract("attention consistency needs the transformer backbone".into()));
    };
    if budget == 0 {
        return Err(Error::Config("attention sample budget must be positive".into()));
    }
    let (pairs, dt) = causal_pairs(times);
    let mut terms = Vec::with_capacity(maps.len());
    for (m, &map) in maps.iter().enumerate() {
        let mut r = rng::stream(seed, "att_pairs", &[m as u64]);
        let mut left = Vec::with_capacity(budget);
        let mut right = Vec::with_capacity(budget);
        let mut w = Vec::with_capacity(budget);
        for _ in 0..budget {
            let a = r.random_range(0..pairs.len());
            let b = r.random_range(0..pairs.len());
            left.push(pairs[a]);
            right.push(pairs[b]);
            w.push(kernel(dt[a], dt[b], ATT_SIGMA_DAYS));
        }
        let l = tape.gather(map, &left)?;
        let rr = tape.gather(map, &right)?;
        let d = tape.sub(l, rr)?;
        let d = tape.square(d);
        let d = tape.mul_const(d, &Tensor::column(w))?;
        terms.push(tape.mean(d));
    }
    mean_of(tape, terms)
}

/// Exact expectation of [`attention_consistency`]'s estimator for one map:
/// the full `O(n^4)` sum over pair-of-pairs divided by the squared pair count.
pub fn attention_consistency_exact(map: &Tensor, times: &[f64], sigma: f64) -> f64 {
    let (pairs, dt) = causal_pairs(times);
    let v = map.data();
    let mut s = 0.0;
    for (a, &pa) in pairs.iter().enumerate() {
        for (b, &pb) in pairs.iter().enumerate() {
            s += kernel(dt[a], dt[b], sigma) * (v[pa] - v[pb]).powi(2);
        }
    }
    s / (pairs.len() * pairs.len()) as f64
}
