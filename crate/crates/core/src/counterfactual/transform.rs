use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::timeline::{ObservationWindow, SignalTimeline, DAY};

/// The span of the signal that constitutes "the treatment" for one post:
/// `[t0 + tau_obs, t0 + tau_obs + K * step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionWindow {
    pub start: i64,
    pub end: i64,
}

impl InterventionWindow {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end < start {
            return Err(Error::Contract(format!("intervention window [{start}, {end}) is reversed")));
        }
        Ok(Self { start, end })
    }

    pub fn for_post(t0: i64, win: &ObservationWindow) -> Self {
        Self {
            start: win.observed_end(t0),
            end: win.horizon_end(t0),
        }
    }

    /// Grid index range `[lo, hi)` of points with `start <= t < end`.
    pub fn indices(&self, signal: &SignalTimeline) -> (usize, usize) {
        let idx = |t: i64| -> usize {
            if t <= signal.start() {
                0
            } else {
                let k = (t - signal.start() + signal.step() - 1) / signal.step();
                (k as usize).min(signal.len())
            }
        };
        (idx(self.start), idx(self.end))
    }
}

/// A counterfactual rewrite of a signal timeline. Grid and length are always
/// preserved.
pub trait SignalTransform: Send + Sync {
    fn name(&self) -> String;
    fn apply(&self, signal: &SignalTimeline, window: &InterventionWindow) -> Result<SignalTimeline>;
}

/// Keep each grid point of the window with probability `rate`, else zero it.
///
/// The keep decision for a point is `u(seed, t) < rate` with `u` a hash of the
/// absolute grid time, so masks are nested across rates and identical for
/// every post that covers the same point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exposure {
    pub rate: f64,
    pub seed: u64,
}

impl SignalTransform for Exposure {
    fn name(&self) -> String {
        format!("exposure({})", self.rate)
    }

    fn apply(&self, signal: &SignalTimeline, window: &InterventionWindow) -> Result<SignalTimeline> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Contract(format!("exposure rate {} outside [0, 1]", self.rate)));
        }
        let (lo, hi) = window.indices(signal);
        let mut v = signal.values().to_vec();
        for (k, x) in v.iter_mut().enumerate().take(hi).skip(lo) {
            let u = rng::unit(self.seed, "exposure", &[signal.time_at(k) as u64]);
            if u >= self.rate {
                *x = 0.0;
            }
        }
        signal.with_values(v)
    }
}

/// Move the window's content by `shift` seconds (negative is earlier). The
/// part of the window left behind is zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingShift {
    pub shift: i64,
}

impl SignalTransform for TimingShift {
    fn name(&self) -> String {
        format!("timing_shift({}d)", self.shift as f64 / DAY as f64)
    }

    fn apply(&self, signal: &SignalTimeline, window: &InterventionWindow) -> Result<SignalTimeline> {
        if self.shift % signal.step() != 0 {
            return Err(Error::Contract(format!(
                "shift {}s is not a multiple of the {}s grid",
                self.shift,
                signal.step()
            )));
        }
        if self.shift == 0 {
            return Ok(signal.clone());
        }
        if window.start + self.shift < signal.start() {
            return Err(Error::OutOfRange {
                t: window.start + self.shift,
                start: signal.start(),
                end: signal.end(),
            });
        }
        let (lo, hi) = window.indices(signal);
        let delta = self.shift / signal.step();
        let src = signal.values();
        let mut v = src.to_vec();
        for x in &mut v[lo..hi] {
            *x = 0.0;
        }
        for k in lo..hi {
            let dst = k as i64 + delta;
            if dst >= 0 && (dst as usize) < v.len() {
                v[dst as usize] = src[k];
            }
        }
        signal.with_values(v)
    }
}

/// Truncate or extend the elevated segment of the window so it lasts exactly
/// `duration` seconds from its onset.
///
/// The elevated segment runs from the first to the last grid point above
/// `threshold` inside the window. Truncation fills the cut part with the value
/// that followed the segment; extension holds the segment's last value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Duration {
    pub duration: i64,
    pub threshold: f64,
}

impl Duration {
    /// Index range `[onset, end)` of the elevated segment, if any.
    pub fn segment(signal: &SignalTimeline, window: &InterventionWindow, threshold: f64) -> Option<(usize, usize)> {
        let (lo, hi) = window.indices(signal);
        let v = signal.values();
        let first = (lo..hi).find(|&k| v[k] > threshold)?;
        let last = (lo..hi).rev().find(|&k| v[k] > threshold)?;
        Some((first, last + 1))
    }

    /// Duration of the elevated segment in seconds, zero when there is none.
    pub fn observed(signal: &SignalTimeline, window: &InterventionWindow, threshold: f64) -> i64 {
        Self::segment(signal, window, threshold)
            .map_or(0, |(a, b)| (b - a) as i64 * signal.step())
    }
}

impl SignalTransform for Duration {
    fn name(&self) -> String {
        format!("duration({}d)", self.duration as f64 / DAY as f64)
    }

    fn apply(&self, signal: &SignalTimeline, window: &InterventionWindow) -> Result<SignalTimeline> {
        if self.duration <= 0 {
            return Err(Error::Contract(format!("duration must be positive, got {}s", self.duration)));
        }
        let Some((onset, end)) = Self::segment(signal, window, self.threshold) else {
            return Ok(signal.clone());
        };
        let (_, hi) = window.indices(signal);
        let want = (self.duration / signal.step()).max(1) as usize;
        let target = (onset + want).min(hi);
        let mut v = signal.values().to_vec();
        if target < end {
            let fill = signal.values().get(end).copied().unwrap_or(0.0);
            for x in &mut v[target..end] {
                *x = fill;
            }
        } else {
            let hold = v[end - 1];
            for x in &mut v[end..target] {
                *x = hold;
            }
        }
        signal.with_values(v)
    }
}

/// The three counterfactual families, plus the dropout complement of
/// exposure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CfKind {
    /// Retained-exposure rate.
    Exposure { rate: f64 },
    /// Removed-exposure rate; `Dropout { rate }` equals `Exposure { 1 - rate }`.
    Dropout { rate: f64 },
    TimingShift { days: f64 },
    Duration { days: f64, threshold: f64 },
}

pub const DEFAULT_ELEVATION_THRESHOLD: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct CounterfactualSpec {
    pub kind: CfKind,
    /// Seed of the exposure mask; unused by the other kinds.
    pub rng_seed: u64,
}

/// Flat wire form, `{"kind": "exposure", "rate": 0.2, "rng_seed": 7}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    days: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default)]
    rng_seed: u64,
}

impl TryFrom<RawSpec> for CounterfactualSpec {
    type Error = String;

    fn try_from(r: RawSpec) -> std::result::Result<Self, String> {
        let need = |v: Option<f64>, field: &str| v.ok_or_else(|| format!("{} needs `{field}`", r.kind));
        let allow = |ok: bool, field: &str| if ok { Ok(()) } else { Err(format!("{} does not take `{field}`", r.kind)) };
        let kind = match r.kind.as_str() {
            "exposure" | "dropout" => {
                allow(r.days.is_none(), "days")?;
                allow(r.threshold.is_none(), "threshold")?;
                let rate = need(r.rate, "rate")?;
                if r.kind == "exposure" {
                    CfKind::Exposure { rate }
                } else {
                    CfKind::Dropout { rate }
                }
            }
            "timing_shift" => {
                allow(r.rate.is_none(), "rate")?;
                allow(r.threshold.is_none(), "threshold")?;
                CfKind::TimingShift { days: need(r.days, "days")? }
            }
            "duration" => {
                allow(r.rate.is_none(), "rate")?;
                CfKind::Duration {
                    days: need(r.days, "days")?,
                    threshold: r.threshold.unwrap_or(DEFAULT_ELEVATION_THRESHOLD),
                }
            }
            other => return Err(format!("unknown counterfactual kind `{other}`")),
        };
        let spec = Self { kind, rng_seed: r.rng_seed };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

impl From<CounterfactualSpec> for RawSpec {
    fn from(s: CounterfactualSpec) -> Self {
        let (kind, rate, days, threshold) = match s.kind {
            CfKind::Exposure { rate } => ("exposure", Some(rate), None, None),
            CfKind::Dropout { rate } => ("dropout", Some(rate), None, None),
            CfKind::TimingShift { days } => ("timing_shift", None, Some(days), None),
            CfKind::Duration { days, threshold } => ("duration", None, Some(days), Some(threshold)),
        };
        Self {
            kind: kind.into(),
            rate,
            days,
            threshold,
            rng_seed: s.rng_seed,
        }
    }
}

impl CounterfactualSpec {
    pub fn exposure(rate: f64, rng_seed: u64) -> Self {
        Self {
            kind: CfKind::Exposure { rate },
            rng_seed,
        }
    }

    pub fn timing_shift(days: f64) -> Self {
        Self {
            kind: CfKind::TimingShift { days },
            rng_seed: 0,
        }
    }

    pub fn duration(days: f64) -> Self {
        Self {
            kind: CfKind::Duration {
                days,
                threshold: DEFAULT_ELEVATION_THRESHOLD,
            },
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CfKind::Exposure { rate } | CfKind::Dropout { rate } if !(0.0..=1.0).contains(&rate) => {
                Err(Error::Config(format!("exposure rate {rate} outside [0, 1]")))
            }
            CfKind::Duration { days, .. } if !(days > 0.0) => {
                Err(Error::Config(format!("duration must be positive, got {days} days")))
            }
            CfKind::TimingShift { days } if !days.is_finite() => {
                Err(Error::Config(format!("timing shift must be finite, got {days}")))
            }
            _ => Ok(()),
        }
    }

    pub fn transform(&self) -> Result<Box<dyn SignalTransform>> {
        self.validate()?;
        let secs = |days: f64| (days * DAY as f64).round() as i64;
        Ok(match self.kind {
            CfKind::Exposure { rate } => Box::new(Exposure {
                rate,
                seed: self.rng_seed,
            }),
            CfKind::Dropout { rate } => Box::new(Exposure {
                rate: 1.0 - rate,
                seed: self.rng_seed,
            }),
            CfKind::TimingShift { days } => Box::new(TimingShift { shift: secs(days) }),
            CfKind::Duration { days, threshold } => Box::new(Duration {
                duration: secs(days),
                threshold,
            }),
        })
    }

    pub fn label(&self) -> String {
        match self.kind {
            CfKind::Exposure { rate } => format!("exposure {:.0}%", rate * 100.0),
            CfKind::Dropout { rate } => format!("dropout {:.0}%", rate * 100.0),
            CfKind::TimingShift { days } => format!("shift {days:+}d"),
            CfKind::Duration { days, .. } => format!("{days}-day duration"),
        }
    }
}

/// `Ψ(signal)` for the post whose intervention window is `window`.
pub fn apply_cf(signal: &SignalTimeline, spec: &CounterfactualSpec, window: &InterventionWindow) -> Result<SignalTimeline> {
    spec.transform()?.apply(signal, window)
}

/// A treated-versus-reference pair of signal regimes. A `None` reference is the
/// factual signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contrast {
    pub label: String,
    pub treated: CounterfactualSpec,
    #[serde(default)]
    pub reference: Option<CounterfactualSpec>,
}

impl Contrast {
    pub fn against_factual(label: impl Into<String>, treated: CounterfactualSpec) -> Self {
        Self {
            label: label.into(),
            treated,
            reference: None,
        }
    }

    pub fn between(label: impl Into<String>, reference: CounterfactualSpec, treated: CounterfactualSpec) -> Self {
        Self {
            label: label.into(),
            treated,
            reference: Some(reference),
        }
    }

    /// Full exposure against none: the total effect of the signal's window.
    pub fn full_exposure(seed: u64) -> Self {
        Self::between(
            "CF1 full (0%→100%)",
            CounterfactualSpec::exposure(0.0, seed),
            CounterfactualSpec::exposure(1.0, seed),
        )
    }

    /// `(treated, reference)` signals for one post.
    pub fn signals(&self, signal: &SignalTimeline, window: &InterventionWindow) -> Result<(SignalTimeline, SignalTimeline)> {
        let treated = apply_cf(signal, &self.treated, window)?;
        let reference = match &self.reference {
            Some(r) => apply_cf(signal, r, window)?,
            None => signal.clone(),
        };
        Ok((treated, reference))
    }
}

/// The nine-cell scenario grid: exposure steps, timing shifts and durations.
pub fn standard_grid(seed: u64) -> Vec<Contrast> {
    let e = |r| CounterfactualSpec::exposure(r, seed);
    vec![
        Contrast::between("CF1-1 (0%→20%)", e(0.0), e(0.2)),
        Contrast::between("CF1-2 (20%→40%)", e(0.2), e(0.4)),
        Contrast::between("CF1-3 (40%→60%)", e(0.4), e(0.6)),
        Contrast::against_factual("CF2-1 (-5 days)", CounterfactualSpec::timing_shift(-5.0)),
        Contrast::against_factual("CF2-2 (-3 days)", CounterfactualSpec::timing_shift(-3.0)),
        Contrast::against_factual("CF2-3 (-1 day)", CounterfactualSpec::timing_shift(-1.0)),
        Contrast::against_factual("CF3-1 (1-day dur.)", CounterfactualSpec::duration(1.0)),
        Contrast::against_factual("CF3-2 (3-day dur.)", CounterfactualSpec::duration(3.0)),
        Contrast::against_factual("CF3-3 (5-day dur.)", CounterfactualSpec::duration(5.0)),
    ]
}
