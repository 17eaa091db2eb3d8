//! Synthetic data with a known causal structure.
//!
//! Engagement is a discrete-time self-exciting Poisson process driven by the
//! shared signal:
//!
//! ```text
//! r(s) = mu + eta * g(t0 + s*L) / 100 + phi * S(s),   S(s) = kappa * (S(s-1) + n(s-1))
//! n(s) ~ Poisson(r(s))
//! ```
//!
//! so `S(s) = sum_{u<s} kappa^(s-u) n(u)`. Events of step `s` are stamped at the
//! end of the step, `t0 + (s+1)*L`, and split into the four metrics by an
//! i.i.d. multinomial. Because the recursion is linear, expectations follow
//! the same recursion with `n` replaced by its mean.

mod oracle;

pub use oracle::{oracle_ate, Oracle, OracleAte};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::counterfactual::{Contrast, InterventionWindow};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::timeline::{
    EngagementHistory, EngagementVector, GridPosition, Observation, ObservationWindow, Post,
    SignalTimeline, DAY, DIMS, HOUR, MINUTE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpParams {
    /// Base rate in events per step.
    pub mu: f64,
    /// Gain on the signal scaled to `[0, 1]`.
    pub eta: f64,
    /// Self-excitation weight, `0 <= phi < 1`.
    pub phi: f64,
    /// Per-step decay of the excitation state, in `(0, 1]`.
    pub kappa: f64,
    pub mark_probs: [f64; DIMS],
    pub steps: usize,
    pub step_len: i64,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            mu: 0.01,
            eta: 0.2,
            phi: 0.3,
            kappa: 0.5,
            mark_probs: [0.55, 0.15, 0.1, 0.2],
            steps: 14 * 144,
            step_len: 10 * MINUTE,
        }
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi < 1.0) {
            return Err(Error::Supercritical(self.phi));
        }
        let bad = |what: &str| Err(Error::Config(format!("dgp: {what}")));
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu must be finite and >= 0");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and >= 0");
        }
        if !(self.phi >= 0.0) {
            return bad("phi must be >= 0");
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad("kappa must lie in (0, 1]");
        }
        if self.mark_probs.iter().any(|p| !(*p >= 0.0)) || (self.mark_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("mark_probs must be a probability vector");
        }
        if self.step_len <= 0 {
            return bad("step_len must be positive");
        }
        Ok(())
    }

    /// Mean offspring per event, `phi * kappa / (1 - kappa)`; infinite for
    /// `kappa = 1`.
    pub fn branching_ratio(&self) -> f64 {
        if self.kappa >= 1.0 {
            f64::INFINITY
        } else {
            self.phi * self.kappa / (1.0 - self.kappa)
        }
    }

    /// Exogenous rate `mu + eta * g / 100` at step `s` of a post created at
    /// `t0`. Signal before the timeline start counts as zero.
    fn drive(&self, signal: &SignalTimeline, t0: i64, s: usize) -> Result<f64> {
        let t = t0 + s as i64 * self.step_len;
        let g = match signal.position(t) {
            GridPosition::At(k) => signal.values()[k],
            GridPosition::Before => 0.0,
            GridPosition::After => return Err(signal.out_of_range(t)),
        };
        Ok(self.mu + self.eta * g / 100.0)
    }

    /// Steps whose events are stamped at or before `t`.
    pub fn steps_through(&self, t0: i64, t: i64) -> usize {
        if t < t0 {
            0
        } else {
            (((t - t0) / self.step_len) as usize).min(self.steps)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spike {
    pub center: i64,
    pub amplitude: f64,
    /// Standard deviation of the Gaussian bump, seconds.
    pub width: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalScenario {
    pub start: i64,
    pub step: i64,
    pub len: usize,
    pub baseline: f64,
    pub spikes: Vec<Spike>,
    pub noise: f64,
    pub seed: u64,
}

impl SignalScenario {
    /// `days` of 10-minute signal with `n_spikes` bumps of amplitude 20..90
    /// and width 6..24 hours placed uniformly at random.
    pub fn random(days: i64, n_spikes: usize, seed: u64) -> Self {
        let step = 10 * MINUTE;
        let len = (days * DAY / step) as usize + 1;
        let mut r = rng::stream(seed, "scenario", &[]);
        let spikes = (0..n_spikes)
            .map(|_| Spike {
                center: r.random_range(0..days * DAY),
                amplitude: r.random_range(20.0..90.0),
                width: r.random_range(6 * HOUR..=24 * HOUR),
            })
            .collect();
        Self {
            start: 0,
            step,
            len,
            baseline: 5.0,
            spikes,
            noise: 1.0,
            seed,
        }
    }
}

/// Shape of a random scenario, separate from its seed so it can live in a
/// run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub days: i64,
    pub n_spikes: usize,
    pub baseline: f64,
    pub noise: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            days: 30,
            n_spikes: 10,
            baseline: 5.0,
            noise: 1.0,
        }
    }
}

impl SignalConfig {
    pub fn scenario(&self, seed: u64) -> Result<SignalScenario> {
        if self.days <= 0 {
            return Err(Error::Config(format!("signal: days must be positive, got {}", self.days)));
        }
        if !(self.baseline.is_finite() && self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("signal: baseline must be finite and noise finite and >= 0".into()));
        }
        Ok(SignalScenario {
            baseline: self.baseline,
            noise: self.noise,
            ..SignalScenario::random(self.days, self.n_spikes, seed)
        })
    }
}

pub fn gen_signal(sc: &SignalScenario) -> Result<SignalTimeline> {
    let noise = Normal::new(0.0, sc.noise.max(0.0))
        .map_err(|e| Error::Config(format!("signal noise: {e}")))?;
    let mut r = rng::stream(sc.seed, "signal-noise", &[]);
    let values = (0..sc.len)
        .map(|k| {
            let t = sc.start + k as i64 * sc.step;
            let bumps: f64 = sc
                .spikes
                .iter()
                .map(|s| {
                    let z = (t - s.center) as f64 / s.width.max(1) as f64;
                    s.amplitude * (-0.5 * z * z).exp()
                })
                .sum();
            let eps = if sc.noise > 0.0 { noise.sample(&mut r) } else { 0.0 };
            (sc.baseline + bumps + eps).clamp(0.0, 100.0)
        })
        .collect();
    SignalTimeline::new(sc.start, sc.step, values)
}

/// Realized event counts per step for one post.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub t0: i64,
    pub step_len: i64,
    pub counts: Vec<[u64; DIMS]>,
}

impl Cascade {
    /// Cumulative counts of events stamped at or before `t`.
    pub fn cumulative_at(&self, t: i64) -> EngagementVector {
        let upto = if t < self.t0 {
            0
        } else {
            (((t - self.t0) / self.step_len) as usize).min(self.counts.len())
        };
        let mut c = [0u64; DIMS];
        for n in &self.counts[..upto] {
            for (a, b) in c.iter_mut().zip(n) {
                *a += b;
            }
        }
        EngagementVector::from_array(c)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Snapshots at the given increasing times.
    pub fn history(&self, times: &[i64]) -> Result<EngagementHistory> {
        let mut obs = Vec::with_capacity(times.len());
        let mut acc = [0u64; DIMS];
        let mut done = 0usize;
        for &t in times {
            let upto = if t < self.t0 {
                0
            } else {
                (((t - self.t0) / self.step_len) as usize).min(self.counts.len())
            };
            for n in &self.counts[done.min(upto)..upto] {
                for (a, b) in acc.iter_mut().zip(n) {
                    *a += b;
                }
            }
            done = done.max(upto);
            obs.push(Observation {
                t,
                counts: EngagementVector::from_array(acc),
            });
        }
        EngagementHistory::new(obs)
    }
}

/// Simulate one post. Step `s` draws from its own `(seed, post_key, s)`
/// stream, so changing the signal at steps `>= s` cannot alter earlier events.
pub fn gen_cascade(signal: &SignalTimeline, t0: i64, p: &DgpParams, seed: u64, post_key: u64) -> Result<Cascade> {
    p.validate()?;
    let mut counts = Vec::with_capacity(p.steps);
    let mut state = 0.0;
    let mut prev = 0u64;
    for s in 0..p.steps {
        state = p.kappa * (state + prev as f64);
        let rate = p.drive(signal, t0, s)? + p.phi * state;
        let mut r = rng::stream(seed, "cascade", &[post_key, s as u64]);
        let n = if rate > 0.0 {
            Poisson::new(rate)
                .map_err(|e| Error::Contract(format!("poisson rate {rate}: {e}")))?
                .sample(&mut r) as u64
        } else {
            0
        };
        let mut marks = [0u64; DIMS];
        for _ in 0..n {
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut m = DIMS - 1;
            for (i, q) in p.mark_probs.iter().enumerate() {
                acc += q;
                if u < acc {
                    m = i;
                    break;
                }
            }
            marks[m] += 1;
        }
        counts.push(marks);
        prev = n;
    }
    Ok(Cascade {
        t0,
        step_len: p.step_len,
        counts,
    })
}

/// Expected events per step and their running sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    pub per_step: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl ExpectedCounts {
    /// Expected total of events stamped at or before `t`.
    pub fn total_at(&self, t0: i64, step_len: i64, t: i64) -> f64 {
        let upto = if t < t0 {
            0
        } else {
            (((t - t0) / step_len) as usize).min(self.cumulative.len())
        };
        if upto == 0 {
            0.0
        } else {
            self.cumulative[upto - 1]
        }
    }
}

/// `E[n(s)] = r0(s) + phi * sum_{u<s} kappa^(s-u) E[n(u)]`.
pub fn expected_counts(signal: &SignalTimeline, t0: i64, p: &DgpParams) -> Result<ExpectedCounts> {
    p.validate()?;
    let mut per_step = Vec::with_capacity(p.steps);
    let mut cumulative = Vec::with_capacity(p.steps);
    let (mut state, mut prev, mut acc) = (0.0, 0.0, 0.0);
    for s in 0..p.steps {
        state = p.kappa * (state + prev);
        let e = p.drive(signal, t0, s)? + p.phi * state;
        acc += e;
        per_step.push(e);
        cumulative.push(acc);
        prev = e;
    }
    Ok(ExpectedCounts { per_step, cumulative })
}

/// Expected per-metric cumulative counts at `t`.
pub fn expected_at(signal: &SignalTimeline, t0: i64, p: &DgpParams, t: i64) -> Result<[f64; DIMS]> {
    let needed = p.steps_through(t0, t);
    if (needed as i64) * p.step_len < t - t0 {
        return Err(Error::Config(format!(
            "dgp horizon of {} steps ends before t={t}",
            p.steps
        )));
    }
    let mut q = p.clone();
    q.steps = needed;
    let e = expected_counts(signal, t0, &q)?;
    let total = e.total_at(t0, p.step_len, t);
    Ok(p.mark_probs.map(|m| m * total))
}

/// Exact effect of `contrast` on the expected horizon-end counts of a post
/// created at `t0`: `E[Y | treated] - E[Y | reference]` per metric.
pub fn true_ate(signal: &SignalTimeline, contrast: &Contrast, t0: i64, p: &DgpParams, win: &ObservationWindow) -> Result<[f64; DIMS]> {
    let window = InterventionWindow::for_post(t0, win);
    let (treated, reference) = contrast.signals(signal, &window)?;
    let end = win.horizon_end(t0);
    let a = expected_at(&treated, t0, p, end)?;
    let b = expected_at(&reference, t0, p, end)?;
    Ok(std::array::from_fn(|m| a[m] - b[m]))
}

/// A group of posts sharing an exogenous gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub eta: f64,
    pub n_posts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_posts: usize,
    pub window: ObservationWindow,
    /// Mean spacing of observed snapshots.
    pub snapshot_every: i64,
    /// Snapshots are jittered uniformly by up to this much either way.
    pub snapshot_jitter: i64,
    /// Earliest allowed gap between the signal start and a post's `t0`.
    pub lead_in: i64,
    /// Explicit sources; empty means one source using the base `eta`.
    pub sources: Vec<SourceSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_posts: 500,
            window: ObservationWindow::default(),
            snapshot_every: 12 * HOUR,
            snapshot_jitter: 3 * HOUR,
            lead_in: DAY,
            sources: Vec::new(),
        }
    }
}

impl DatasetConfig {
    pub fn resolved_sources(&self, p: &DgpParams) -> Vec<SourceSpec> {
        if self.sources.is_empty() {
            vec![SourceSpec {
                name: "source-00".into(),
                eta: p.eta,
                n_posts: self.n_posts,
            }]
        } else {
            self.sources.clone()
        }
    }
}

/// Parameters for a post from `source`: the base DGP with the source's gain
/// and enough steps to cover the horizon.
pub fn post_params(p: &DgpParams, eta: f64, win: &ObservationWindow) -> DgpParams {
    let span = win.horizon_end(0);
    DgpParams {
        eta,
        steps: ((span + p.step_len - 1) / p.step_len) as usize,
        ..p.clone()
    }
}

const CATEGORIES: [&str; 4] = ["news", "politics", "entertainment", "sports"];

/// Observed snapshot times in `(t0, t0 + tau_obs]` followed by the prediction
/// grid.
fn snapshot_times(t0: i64, cfg: &DatasetConfig, seed: u64, key: u64) -> Vec<i64> {
    let mut r = rng::stream(seed, "snapshots", &[key]);
    let end = cfg.window.observed_end(t0);
    let mut times = Vec::new();
    let mut k = 1;
    loop {
        let base = t0 + k * cfg.snapshot_every;
        if base >= end {
            break;
        }
        let j = if cfg.snapshot_jitter > 0 {
            r.random_range(-cfg.snapshot_jitter..=cfg.snapshot_jitter)
        } else {
            0
        };
        let t = (base + j).clamp(t0 + 1, end - 1);
        if times.last().is_none_or(|&l| t > l) {
            times.push(t);
        }
        k += 1;
    }
    times.push(end);
    times.extend(crate::timeline::prediction_grid(t0, &cfg.window));
    times
}

/// Generate posts on `signal` with seeded, reproducible splits.
pub fn make_dataset(signal: &SignalTimeline, cfg: &DatasetConfig, p: &DgpParams, seed: u64) -> Result<Dataset> {
    p.validate()?;
    cfg.window.validate()?;
    let sources = cfg.resolved_sources(p);
    let n: usize = sources.iter().map(|s| s.n_posts).sum();
    if n == 0 {
        return Err(Error::Config("dataset needs at least one post".into()));
    }
    let span = cfg.window.horizon_end(0);
    let lo = signal.start() + cfg.lead_in;
    let hi = signal.end() - span;
    if hi < lo {
        return Err(Error::Config(format!(
            "signal [{}, {}] is too short for a {span}s post span after a {}s lead-in",
            signal.start(),
            signal.end(),
            cfg.lead_in
        )));
    }
    let slots = ((hi - lo) / p.step_len) as u64 + 1;
    let mut jobs = Vec::with_capacity(n);
    for (si, s) in sources.iter().enumerate() {
        for _ in 0..s.n_posts {
            jobs.push((jobs.len(), si));
        }
    }
    use rayon::prelude::*;
    let posts = jobs
        .par_iter()
        .map(|&(i, si)| {
            let src = &sources[si];
            let key = i as u64;
            let mut r = rng::stream(seed, "t0", &[key]);
            let t0 = lo + r.random_range(0..slots) as i64 * p.step_len;
            let category = CATEGORIES[r.random_range(0..CATEGORIES.len())];
            let pp = post_params(p, src.eta, &cfg.window);
            let cascade = gen_cascade(signal, t0, &pp, seed, key)?;
            let history = cascade.history(&snapshot_times(t0, cfg, seed, key))?;
            Post::new(format!("post-{i:05}"), t0, format!("content-{i:05}"), src.name.clone(), category, history)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(signal.clone(), posts, Split::shuffled(n, seed), cfg.window)
}

#[cfg(test)]
mod tests;
