//! Posts, interval-censored engagement histories, external signal timelines
//! and the lag-window alignment that turns signals into model features.
//!
//! All timestamps and durations are integer seconds.

mod io;

pub use io::{
    read_posts_jsonl, read_signal, write_posts_jsonl, write_signal, SignalMeta,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of engagement dimensions.
pub const DIMS: usize = 4;
pub const METRIC_NAMES: [&str; DIMS] = ["likes", "shares", "comments", "emoji"];

pub const MINUTE: i64 = 60;
pub const HOUR: i64 = 3600;
pub const DAY: i64 = 86_400;

/// Cumulative engagement counts (likes, shares, comments, emoji).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EngagementVector([u64; DIMS]);

impl EngagementVector {
    pub fn new(likes: u64, shares: u64, comments: u64, emoji: u64) -> Self {
        Self([likes, shares, comments, emoji])
    }

    pub fn from_array(counts: [u64; DIMS]) -> Self {
        Self(counts)
    }

    pub fn counts(&self) -> [u64; DIMS] {
        self.0
    }

    pub fn likes(&self) -> u64 {
        self.0[0]
    }

    pub fn shares(&self) -> u64 {
        self.0[1]
    }

    pub fn comments(&self) -> u64 {
        self.0[2]
    }

    pub fn emoji(&self) -> u64 {
        self.0[3]
    }

    pub fn to_f64(&self) -> [f64; DIMS] {
        self.0.map(|c| c as f64)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// True when every dimension is `>=` the matching one in `other`.
    pub fn dominates(&self, other: &Self) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a >= b)
    }
}

/// One snapshot of cumulative engagement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub t: i64,
    pub counts: EngagementVector,
}

/// Interval-censored engagement history: strictly increasing snapshot times
/// with non-decreasing cumulative counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Observation>", into = "Vec<Observation>")]
pub struct EngagementHistory {
    observations: Vec<Observation>,
}

impl EngagementHistory {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        for (i, pair) in observations.windows(2).enumerate() {
            if pair[1].t <= pair[0].t {
                return Err(Error::Contract(format!(
                    "history timestamps must be strictly increasing (entry {})",
                    i + 1
                )));
            }
            if !pair[1].counts.dominates(&pair[0].counts) {
                return Err(Error::Contract(format!(
                    "cumulative counts decrease at entry {}",
                    i + 1
                )));
            }
        }
        Ok(Self { observations })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn last(&self) -> Option<&Observation> {
        self.observations.last()
    }

    /// Cumulative counts at `t`: the last snapshot at or before `t`, or zero.
    pub fn value_at(&self, t: i64) -> EngagementVector {
        let idx = self.observations.partition_point(|o| o.t <= t);
        if idx == 0 {
            EngagementVector::default()
        } else {
            self.observations[idx - 1].counts
        }
    }
}

impl TryFrom<Vec<Observation>> for EngagementHistory {
    type Error = Error;

    fn try_from(v: Vec<Observation>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EngagementHistory> for Vec<Observation> {
    fn from(h: EngagementHistory) -> Self {
        h.observations
    }
}

/// A post: posting time, opaque content/user references, category label and
/// its engagement history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub t0: i64,
    pub content_ref: String,
    pub user_ref: String,
    pub category: String,
    history: EngagementHistory,
}

impl Post {
    pub fn new(
        post_id: impl Into<String>,
        t0: i64,
        content_ref: impl Into<String>,
        user_ref: impl Into<String>,
        category: impl Into<String>,
        history: EngagementHistory,
    ) -> Result<Self> {
        let post_id = post_id.into();
        if let Some(o) = history.observations().first() {
            if o.t < t0 {
                return Err(Error::Contract(format!(
                    "post {post_id}: observation at {} precedes t0 {t0}",
                    o.t
                )));
            }
        }
        Ok(Self {
            post_id,
            t0,
            content_ref: content_ref.into(),
            user_ref: user_ref.into(),
            category: category.into(),
            history,
        })
    }

    pub fn history(&self) -> &EngagementHistory {
        &self.history
    }
}

/// Signal values `0..=100` on a uniform grid starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTimeline {
    start: i64,
    step: i64,
    values: Vec<f64>,
}

/// Where a timestamp falls relative to a timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPosition {
    Before,
    At(usize),
    After,
}

impl SignalTimeline {
    pub fn new(start: i64, step: i64, values: Vec<f64>) -> Result<Self> {
        if step <= 0 {
            return Err(Error::Config(format!("grid step must be positive, got {step}")));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=100.0).contains(*v))
        {
            return Err(Error::Contract(format!("signal value {v} at index {i} outside [0, 100]")));
        }
        Ok(Self { start, step, values })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn step(&self) -> i64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_at(&self, k: usize) -> i64 {
        self.start + k as i64 * self.step
    }

    /// Timestamp of the last grid point (equals `start` when empty).
    pub fn end(&self) -> i64 {
        self.start + (self.values.len().max(1) as i64 - 1) * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(k, &g)| (self.time_at(k), g))
    }

    /// Grid point at or before `t`.
    pub fn position(&self, t: i64) -> GridPosition {
        if t < self.start {
            return GridPosition::Before;
        }
        let k = ((t - self.start) / self.step) as usize;
        if k >= self.values.len() {
            GridPosition::After
        } else {
            GridPosition::At(k)
        }
    }

    /// Value at the grid point at or before `t`.
    pub fn lookup(&self, t: i64) -> Result<f64> {
        match self.position(t) {
            GridPosition::At(k) => Ok(self.values[k]),
            _ => Err(self.out_of_range(t)),
        }
    }

    pub(crate) fn out_of_range(&self, t: i64) -> Error {
        Error::OutOfRange {
            t,
            start: self.start,
            end: self.end(),
        }
    }

    /// Grid points inside the closed interval `[from, to]`.
    pub fn slice(&self, from: i64, to: i64) -> SignalTimeline {
        let first = if from <= self.start {
            0
        } else {
            ((from - self.start + self.step - 1) / self.step) as usize
        };
        let last = if to < self.start {
            None
        } else {
            Some((((to - self.start) / self.step) as usize).min(self.values.len().saturating_sub(1)))
        };
        let values = match last {
            Some(l) if first <= l && first < self.values.len() => self.values[first..=l].to_vec(),
            _ => Vec::new(),
        };
        SignalTimeline {
            start: self.time_at(first),
            step: self.step,
            values,
        }
    }

    /// Copy with `values` replaced; the grid is unchanged.
    pub fn with_values(&self, values: Vec<f64>) -> Result<SignalTimeline> {
        if values.len() != self.values.len() {
            return Err(Error::Dimension {
                op: "with_values",
                left: vec![self.values.len()],
                right: vec![values.len()],
            });
        }
        SignalTimeline::new(self.start, self.step, values)
    }
}

/// Observation window `tau_obs`, prediction step and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationWindow {
    pub tau_obs: i64,
    pub step: i64,
    pub horizon: i64,
}

impl Default for ObservationWindow {
    fn default() -> Self {
        Self {
            tau_obs: 7 * DAY,
            step: DAY,
            horizon: 7 * DAY,
        }
    }
}

impl ObservationWindow {
    pub fn new(tau_obs: i64, step: i64, horizon: i64) -> Result<Self> {
        let w = Self {
            tau_obs,
            step,
            horizon,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_obs <= 0 || self.step <= 0 || self.horizon <= 0 {
            return Err(Error::Config(format!(
                "observation window durations must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Number of prediction points, `floor(horizon / step)`.
    pub fn k(&self) -> usize {
        (self.horizon / self.step) as usize
    }

    /// End of the observed span for a post created at `t0`.
    pub fn observed_end(&self, t0: i64) -> i64 {
        t0 + self.tau_obs
    }

    /// Last prediction time for a post created at `t0`.
    pub fn horizon_end(&self, t0: i64) -> i64 {
        t0 + self.tau_obs + self.k() as i64 * self.step
    }
}

/// Observed history and signal slice for the closed window `[t0, t0 + tau_obs]`.
pub fn slice_observed(
    post: &Post,
    signal: &SignalTimeline,
    win: &ObservationWindow,
) -> Result<(EngagementHistory, SignalTimeline)> {
    win.validate()?;
    if post.history().is_empty() {
        return Err(Error::EmptyHistory(post.post_id.clone()));
    }
    let end = win.observed_end(post.t0);
    let obs = post
        .history()
        .observations()
        .iter()
        .filter(|o| o.t >= post.t0 && o.t <= end)
        .copied()
        .collect();
    Ok((EngagementHistory { observations: obs }, signal.slice(post.t0, end)))
}

/// Prediction timestamps `t0 + tau_obs + k * step` for `k = 1..=K`.
pub fn prediction_grid(t0: i64, win: &ObservationWindow) -> Vec<i64> {
    (1..=win.k() as i64)
        .map(|k| t0 + win.tau_obs + k * win.step)
        .collect()
}

/// How lag samples are spaced inside the lag window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagMode {
    /// `w` consecutive grid points immediately before the anchor.
    Consecutive,
    /// `w` points spaced `tau_lag / w` apart, covering the whole lag window.
    Strided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LagConfig {
    pub tau_lag: i64,
    pub w: usize,
    pub mode: LagMode,
    /// Zero-fill samples that fall before the timeline start.
    pub pad_before_start: bool,
}

impl Default for LagConfig {
    fn default() -> Self {
        Self {
            tau_lag: 24 * HOUR,
            w: 6,
            mode: LagMode::Strided,
            pad_before_start: true,
        }
    }
}

impl LagConfig {
    /// Spacing between consecutive samples for a grid of step `grid_step`.
    pub fn stride(&self, grid_step: i64) -> Result<i64> {
        if self.w == 0 {
            return Err(Error::Config("lag window needs w >= 1".into()));
        }
        let stride = match self.mode {
            LagMode::Consecutive => grid_step,
            LagMode::Strided => self.tau_lag / self.w as i64,
        };
        if stride < grid_step || stride * self.w as i64 > self.tau_lag {
            return Err(Error::Config(format!(
                "lag window tau_lag={} cannot hold w={} samples on a {grid_step}s grid",
                self.tau_lag, self.w
            )));
        }
        Ok(stride)
    }
}

/// Signal samples preceding an anchor time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagFeature {
    pub anchor: i64,
    pub values: Vec<f64>,
}

/// `values[i] = g(t_j - (i + 1) * stride)` with downward grid snapping; only
/// grid points strictly before `t_j` are read.
pub fn lag_features(signal: &SignalTimeline, t_j: i64, cfg: &LagConfig) -> Result<LagFeature> {
    let stride = cfg.stride(signal.step())?;
    let mut values = Vec::with_capacity(cfg.w);
    for i in 0..cfg.w {
        let q = t_j - (i as i64 + 1) * stride;
        let v = match signal.position(q) {
            GridPosition::At(k) => signal.values()[k],
            GridPosition::Before if cfg.pad_before_start => 0.0,
            _ => return Err(signal.out_of_range(q)),
        };
        values.push(v);
    }
    Ok(LagFeature { anchor: t_j, values })
}

/// Per-dimension `log1p` max-scaling of engagement counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    scale: [f64; DIMS],
}

impl NormStats {
    pub fn new(scale: [f64; DIMS]) -> Result<Self> {
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("normalization scale must be positive, got {s}")));
        }
        Ok(Self { scale })
    }

    /// Max of `log1p(count)` per dimension over the given (training) posts;
    /// dimensions that never move keep scale 1.
    pub fn fit<'a>(posts: impl IntoIterator<Item = &'a Post>) -> Self {
        let mut scale = [0.0f64; DIMS];
        for p in posts {
            for o in p.history().observations() {
                for (s, c) in scale.iter_mut().zip(o.counts.to_f64()) {
                    *s = s.max(c.ln_1p());
                }
            }
        }
        for s in &mut scale {
            if *s <= 0.0 {
                *s = 1.0;
            }
        }
        Self { scale }
    }

    pub fn scale(&self) -> [f64; DIMS] {
        self.scale
    }

    pub fn normalize(&self, e: &[f64; DIMS]) -> [f64; DIMS] {
        std::array::from_fn(|i| e[i].ln_1p() / self.scale[i])
    }

    pub fn denormalize(&self, y: &[f64; DIMS]) -> [f64; DIMS] {
        std::array::from_fn(|i| (y[i] * self.scale[i]).exp_m1())
    }
}

/// `log(1 + e_i) / scale_i` per dimension.
pub fn normalize_engagement(e: &EngagementVector, stats: &NormStats) -> [f64; DIMS] {
    stats.normalize(&e.to_f64())
}
