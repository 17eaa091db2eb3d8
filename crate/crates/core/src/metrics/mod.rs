//! Forecast accuracy and rank-agreement statistics, plus the per-source
//! influence analysis built on them.

mod influence;

pub use influence::{
    evaluate, influence_reference, influence_score, influence_scores, write_influence_csv, EvalReport, SourceInfluence,
};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::bce_term;
use crate::timeline::DIMS;

/// Weights of likes, shares, comments and emoji in the composite score.
pub const COMPOSITE_WEIGHTS: [f64; DIMS] = [1.0, 1.0, 3.0, 1.0];

/// Root-mean-square error over posts x steps x metrics. Trajectories must
/// share their grid: same number of posts and steps per post.
pub fn rmse(pred: &[Vec<[f64; DIMS]>], truth: &[Vec<[f64; DIMS]>]) -> Result<f64> {
    let shape = |t: &[Vec<[f64; DIMS]>]| t.iter().map(Vec::len).collect::<Vec<_>>();
    if shape(pred) != shape(truth) {
        return Err(Error::Dimension {
            op: "rmse",
            left: shape(pred),
            right: shape(truth),
        });
    }
    let mut s = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t) {
            for m in 0..DIMS {
                s += (a[m] - b[m]).powi(2);
            }
            n += DIMS;
        }
    }
    Ok(if n == 0 { 0.0 } else { (s / n as f64).sqrt() })
}

/// Mean binary cross-entropy of probabilities against 0/1 labels.
pub fn bce(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension {
            op: "bce",
            left: vec![probs.len()],
            right: vec![labels.len()],
        });
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    Ok(probs.iter().zip(labels).map(|(&p, &y)| bce_term(p, y)).sum::<f64>() / probs.len() as f64)
}

/// `likes + shares + 3 * comments + emoji`.
pub fn composite_score(e: &[f64; DIMS]) -> f64 {
    e.iter().zip(COMPOSITE_WEIGHTS).map(|(v, w)| v * w).sum()
}

/// Share of items scoring at or below each item: `#{j : s_j <= s_i} / n`.
pub fn percentile_rank(scores: &[f64]) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    scores.iter().map(|&s| percentile_in(&sorted, s)).collect()
}

/// `#{r in sorted : r <= x} / len` for an ascending reference sample.
pub fn percentile_in(sorted: &[f64], x: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.partition_point(|&r| r <= x) as f64 / sorted.len() as f64
}

/// 1-based ranks with ties sharing the average of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two aligned score vectors over the same sources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScorePair {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ScorePair {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                op: "score pair",
                left: vec![a.len()],
                right: vec![b.len()],
            });
        }
        if let Some(x) = a.iter().chain(&b).find(|x| !x.is_finite()) {
            return Err(Error::Contract(format!("scores must be finite, got {x}")));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population moments `(mean_a, mean_b, var_a, var_b, cov)`.
fn moments(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let (ma, mb) = (mean(a), mean(b));
    let n = a.len() as f64;
    let (mut va, mut vb, mut c) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        c += (x - ma) * (y - mb);
    }
    (ma, mb, va / n, vb / n, c / n)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let (_, _, va, vb, c) = moments(a, b);
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Contract("correlation is undefined for a constant vector".into()));
    }
    Ok(c / (va * vb).sqrt())
}

/// Pearson correlation of average ranks.
pub fn spearman(pair: &ScorePair) -> Result<f64> {
    pearson(&average_ranks(&pair.a), &average_ranks(&pair.b))
}

/// Kendall's coefficient of concordance for `m` raters scoring the same `n`
/// items, with the standard tie correction.
pub fn kendall_w(raters: &[&[f64]]) -> Result<f64> {
    let m = raters.len();
    if m < 2 {
        return Err(Error::Contract(format!("Kendall's W needs at least two raters, got {m}")));
    }
    let n = raters[0].len();
    if raters.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension {
            op: "kendall_w",
            left: vec![n],
            right: raters.iter().map(|r| r.len()).collect(),
        });
    }
    let ranks: Vec<Vec<f64>> = raters.iter().map(|r| average_ranks(r)).collect();
    let totals: Vec<f64> = (0..n).map(|i| ranks.iter().map(|r| r[i]).sum()).collect();
    let centre = m as f64 * (n as f64 + 1.0) / 2.0;
    let s: f64 = totals.iter().map(|t| (t - centre).powi(2)).sum();
    let ties: f64 = raters.iter().map(|r| tie_term(r)).sum();
    let (mf, nf) = (m as f64, n as f64);
    let denom = mf * mf * (nf.powi(3) - nf) - mf * ties;
    if denom <= 0.0 {
        return Err(Error::Contract("Kendall's W is undefined when every rater ties all items".into()));
    }
    Ok(12.0 * s / denom)
}

/// `sum over tie groups of t^3 - t`.
fn tie_term(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < s.len() {
        let j = s[i..].iter().take_while(|&&x| x == s[i]).count();
        let t = j as f64;
        total += t * t * t - t;
        i += j;
    }
    total
}

/// Lin's concordance correlation coefficient.
pub fn ccc(pair: &ScorePair) -> Result<f64> {
    let (ma, mb, va, vb, c) = moments(&pair.a, &pair.b);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::Contract("concordance is undefined when both vectors are constant".into()));
    }
    Ok(2.0 * c / (va + vb + (ma - mb).powi(2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub spearman: f64,
    pub kendall_w: f64,
    pub ccc: f64,
}

pub fn rank_stats(pair: &ScorePair) -> Result<RankStats> {
    if pair.len() < 3 {
        return Err(Error::Contract(format!("rank statistics need n >= 3, got {}", pair.len())));
    }
    Ok(RankStats {
        spearman: spearman(pair)?,
        kendall_w: kendall_w(&[&pair.a, &pair.b])?,
        ccc: ccc(pair)?,
    })
}

/// Decile of each item by its position in ascending order, ties broken by
/// index, so every decile holds `n/10` items give or take one.
fn deciles(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut out = vec![0; v.len()];
    for (pos, &i) in idx.iter().enumerate() {
        out[i] = pos * 10 / v.len();
    }
    out
}

/// `cell[i][j]` counts sources in decile `i` of `a` and decile `j` of `b`.
pub fn decile_matrix(pair: &ScorePair) -> Result<[[usize; 10]; 10]> {
    if pair.len() < 10 {
        return Err(Error::Contract(format!("decile matrix needs n >= 10, got {}", pair.len())));
    }
    let (da, db) = (deciles(&pair.a), deciles(&pair.b));
    let mut cells = [[0usize; 10]; 10];
    for (i, j) in da.into_iter().zip(db) {
        cells[i][j] += 1;
    }
    Ok(cells)
}

/// `decile_a,decile_b,count` rows, deciles numbered 1 to 10.
pub fn write_decile_csv(w: impl Write, cells: &[[usize; 10]; 10]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["decile_a", "decile_b", "count"])?;
    for (i, row) in cells.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            out.write_record([(i + 1).to_string(), (j + 1).to_string(), c.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
