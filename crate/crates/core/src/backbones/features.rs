use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::timeline::{
    lag_features, prediction_grid, GridPosition, LagConfig, NormStats, ObservationWindow, Post,
    SignalTimeline, DAY, DIMS,
};

/// Columns of the per-position input: previous normalized cumulative counts,
/// their last increment, four sinusoidal encodings of time since posting,
/// `log1p(gap in days)` and the previous step's treatment indicator.
pub const FEATURE_DIM: usize = 2 * DIMS + 4 + 2;

const PREV: usize = 0;
const INC: usize = DIMS;
const TIME: usize = 2 * DIMS;
const GAP: usize = 2 * DIMS + 4;
const TREAT: usize = 2 * DIMS + 5;

/// Everything needed to turn a post plus a signal into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    pub window: ObservationWindow,
    pub lag: LagConfig,
    /// Signal level at or above which a step counts as treated.
    pub treatment_threshold: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            window: ObservationWindow::default(),
            lag: LagConfig::default(),
            treatment_threshold: 30.0,
        }
    }
}

/// One post laid out on its positions: observed snapshots in
/// `(t0, t0 + tau_obs]` followed by the `K` prediction times.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    pub t0: i64,
    pub times: Vec<i64>,
    /// Gap to the previous position (or to `t0`), in days.
    pub gaps: Vec<f64>,
    /// `n x FEATURE_DIM`.
    pub x: Tensor,
    /// `n x w` lag features scaled to `[0, 1]`.
    pub lags: Tensor,
    /// `n x 4` normalized cumulative counts at the previous position.
    pub y_prev: Tensor,
    /// `n x 4` normalized cumulative counts at each position.
    pub target: Tensor,
    /// Treatment indicator `A(j)` per position.
    pub treatment: Vec<f64>,
    /// Number of leading observed positions.
    pub n_obs: usize,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_pred(&self) -> usize {
        self.len() - self.n_obs
    }

    /// Overwrite position `j`'s previous-count and increment columns, as done
    /// when feeding back the model's own predictions.
    pub fn set_prev(&mut self, j: usize, prev: &[f64; DIMS]) {
        let before: [f64; DIMS] = if j == 0 {
            [0.0; DIMS]
        } else {
            std::array::from_fn(|m| self.y_prev.get(j - 1, m))
        };
        for m in 0..DIMS {
            self.y_prev.set(j, m, prev[m]);
            self.x.set(j, PREV + m, prev[m]);
            self.x.set(j, INC + m, prev[m] - before[m]);
        }
    }

    /// The first `len` positions. Causal models produce the same outputs on
    /// these rows as on the full sequence.
    pub fn prefix(&self, len: usize) -> SequenceInput {
        let rows = |t: &Tensor| {
            let c = t.cols();
            Tensor::matrix(len, c, t.data()[..len * c].to_vec())
        };
        SequenceInput {
            t0: self.t0,
            times: self.times[..len].to_vec(),
            gaps: self.gaps[..len].to_vec(),
            x: rows(&self.x),
            lags: rows(&self.lags),
            y_prev: rows(&self.y_prev),
            target: rows(&self.target),
            treatment: self.treatment[..len].to_vec(),
            n_obs: self.n_obs.min(len),
        }
    }

    /// Feature matrix with the signal-derived treatment column zeroed, for
    /// models that must not see the signal.
    pub fn signal_free_x(&self) -> Tensor {
        let mut x = self.x.clone();
        for j in 0..x.rows() {
            x.set(j, TREAT, 0.0);
        }
        x
    }

    pub fn row4(t: &Tensor, j: usize) -> [f64; DIMS] {
        std::array::from_fn(|m| t.get(j, m))
    }
}

fn treated(signal: &SignalTimeline, t: i64, threshold: f64) -> f64 {
    match signal.position(t) {
        GridPosition::At(k) if signal.values()[k] >= threshold => 1.0,
        _ => 0.0,
    }
}

impl FeatureSpec {
    pub fn positions(&self, post: &Post) -> Vec<i64> {
        let end = self.window.observed_end(post.t0);
        let mut times: Vec<i64> = post
            .history()
            .observations()
            .iter()
            .map(|o| o.t)
            .filter(|&t| t > post.t0 && t <= end)
            .collect();
        if times.last() != Some(&end) {
            times.push(end);
        }
        times.extend(prediction_grid(post.t0, &self.window));
        times
    }

    /// Teacher-forced inputs: every position sees the true previous counts.
    pub fn build(&self, post: &Post, signal: &SignalTimeline, norm: &NormStats) -> Result<SequenceInput> {
        if post.history().is_empty() {
            return Err(Error::EmptyHistory(post.post_id.clone()));
        }
        let times = self.positions(post);
        let n = times.len();
        let n_obs = n - self.window.k();
        let w = self.lag.w;
        let h = post.history();
        let norm_at = |t: i64| norm.normalize(&h.value_at(t).to_f64());

        let mut x = Tensor::zeros(&[n, FEATURE_DIM]);
        let mut lags = Tensor::zeros(&[n, w]);
        let mut y_prev = Tensor::zeros(&[n, DIMS]);
        let mut target = Tensor::zeros(&[n, DIMS]);
        let mut gaps = Vec::with_capacity(n);
        let mut treatment = Vec::with_capacity(n);
        let mut prev_t = post.t0;
        let mut prev = norm_at(post.t0);
        let mut before = [0.0; DIMS];
        for (j, &t) in times.iter().enumerate() {
            let gap = (t - prev_t) as f64 / DAY as f64;
            let elapsed = (t - post.t0) as f64 / DAY as f64;
            for m in 0..DIMS {
                x.set(j, PREV + m, prev[m]);
                x.set(j, INC + m, prev[m] - before[m]);
                y_prev.set(j, m, prev[m]);
            }
            let enc = [
                (TAU * elapsed).sin(),
                (TAU * elapsed).cos(),
                (TAU * elapsed / 7.0).sin(),
                (TAU * elapsed / 7.0).cos(),
            ];
            for (i, e) in enc.into_iter().enumerate() {
                x.set(j, TIME + i, e);
            }
            x.set(j, GAP, gap.ln_1p());
            x.set(j, TREAT, treated(signal, prev_t, self.treatment_threshold));
            for (i, v) in lag_features(signal, t, &self.lag)?.values.into_iter().enumerate() {
                lags.set(j, i, v / 100.0);
            }
            let y = norm_at(t);
            for (m, v) in y.iter().enumerate() {
                target.set(j, m, *v);
            }
            gaps.push(gap);
            treatment.push(treated(signal, t, self.treatment_threshold));
            before = prev;
            prev = y;
            prev_t = t;
        }
        Ok(SequenceInput {
            t0: post.t0,
            times,
            gaps,
            x,
            lags,
            y_prev,
            target,
            treatment,
            n_obs,
        })
    }
}
