//! Treatment-intensity model: the probability that an external attention
//! event occurs at a step, as the clamped square of a latent sum
//!
//! ```text
//! latent(s) = beta0 + g_b(hour(s)) + g_a(s) + g_o(s) + g_g(s)
//! g_a(s) = a_phi * sum_{u<s, A(u)=1} a_rho^(s-u)
//! g_o(s) = o_phi * sum_{u<s} o_rho^(s-u) * |de(u)|_1 / mean_increment
//! g_g(s) = sum_k alpha_k * v_g(s)[k]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bce_term, Tape, Tensor, Var};
use crate::rng;
use crate::timeline::{lag_features, EngagementHistory, LagConfig, SignalTimeline, DAY, HOUR};

pub const HOURS: usize = 24;

/// Geometric kernel `phi * rho^lag`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kernel {
    pub phi: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityParams {
    pub beta0: f64,
    pub baseline: [f64; HOURS],
    pub treat_kernel: Kernel,
    pub outcome_kernel: Kernel,
    pub alpha: Vec<f64>,
}

impl IntensityParams {
    /// Everything zero except the kernel decays, which start at 0.5.
    pub fn zeros(w: usize) -> Self {
        let k = Kernel { phi: 0.0, rho: 0.5 };
        Self {
            beta0: 0.0,
            baseline: [0.0; HOURS],
            treat_kernel: k,
            outcome_kernel: k,
            alpha: vec![0.0; w],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rho) in [("treat", self.treat_kernel.rho), ("outcome", self.outcome_kernel.rho)] {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::Config(format!("{name} kernel decay {rho} outside (0, 1)")));
            }
        }
        let finite = std::iter::once(self.beta0)
            .chain(self.baseline)
            .chain([self.treat_kernel.phi, self.outcome_kernel.phi])
            .chain(self.alpha.iter().copied())
            .all(f64::is_finite);
        if !finite {
            return Err(Error::Config("intensity parameters must be finite".into()));
        }
        Ok(())
    }

    /// Parameters as tensors in the order expected by [`lambda_tape`].
    pub fn to_tensors(&self) -> Vec<Tensor> {
        vec![
            Tensor::scalar(self.beta0),
            Tensor::column(self.baseline.to_vec()),
            Tensor::scalar(self.treat_kernel.phi),
            Tensor::scalar(self.treat_kernel.rho),
            Tensor::scalar(self.outcome_kernel.phi),
            Tensor::scalar(self.outcome_kernel.rho),
            Tensor::column(self.alpha.clone()),
        ]
    }
}

/// Binary treatment indicators per step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentSeries(pub Vec<u8>);

impl TreatmentSeries {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::Contract(format!("treatment indicator {v} is not 0 or 1")));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().map(|&a| a as f64).sum::<f64>() / self.0.len().max(1) as f64
    }
}

/// Per-step covariates on a regular grid. Entry `s` of `treatments` and
/// `outcome_mag` describes step `s` itself and is only read by later steps;
/// `lags[s]` already holds strictly-past signal samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityInputs {
    pub hours: Vec<usize>,
    pub treatments: Vec<u8>,
    pub outcome_mag: Vec<f64>,
    pub lags: Vec<Vec<f64>>,
}

impl IntensityInputs {
    /// Covariates for steps `t_s = start + s * step`, `s < n`.
    ///
    /// The outcome magnitude of step `u` is the L1 growth of the history over
    /// `[t_u, t_{u+1})` divided by `mean_increment`.
    pub fn from_grid(
        signal: &SignalTimeline,
        history: &EngagementHistory,
        treatments: &TreatmentSeries,
        start: i64,
        step: i64,
        lag: &LagConfig,
        mean_increment: f64,
    ) -> Result<Self> {
        if !(mean_increment > 0.0) {
            return Err(Error::Config(format!("mean increment must be positive, got {mean_increment}")));
        }
        let n = treatments.len();
        let t = |s: usize| start + s as i64 * step;
        let hours = (0..n).map(|s| hour_of_day(t(s))).collect();
        let outcome_mag = (0..n)
            .map(|u| {
                let a = history.value_at(t(u) - 1);
                let b = history.value_at(t(u + 1) - 1);
                (b.total() - a.total()) as f64 / mean_increment
            })
            .collect();
        let lags = (0..n)
            .map(|s| lag_features(signal, t(s), lag).map(|f| f.values))
            .collect::<Result<_>>()?;
        Ok(Self {
            hours,
            treatments: treatments.0.clone(),
            outcome_mag,
            lags,
        })
    }

    pub fn len(&self) -> usize {
        self.hours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hours.is_empty()
    }

    fn check(&self, p: &IntensityParams) -> Result<()> {
        let n = self.len();
        if self.treatments.len() != n || self.outcome_mag.len() != n || self.lags.len() != n {
            return Err(Error::Dimension {
                op: "intensity inputs",
                left: vec![n, self.treatments.len()],
                right: vec![self.outcome_mag.len(), self.lags.len()],
            });
        }
        if let Some(l) = self.lags.iter().find(|l| l.len() != p.alpha.len()) {
            return Err(Error::Dimension {
                op: "lag features",
                left: vec![l.len()],
                right: vec![p.alpha.len()],
            });
        }
        if let Some(h) = self.hours.iter().find(|&&h| h >= HOURS) {
            return Err(Error::Contract(format!("hour bin {h} out of range")));
        }
        Ok(())
    }
}

pub fn hour_of_day(t: i64) -> usize {
    (t.rem_euclid(DAY) / HOUR) as usize
}

/// `sum_k alpha_k * v_g(t)[k]` over the lag window before `t`.
pub fn g_signal(signal: &SignalTimeline, t: i64, alpha: &[f64], lag: &LagConfig) -> Result<f64> {
    if alpha.len() != lag.w {
        return Err(Error::Dimension {
            op: "g_signal",
            left: vec![alpha.len()],
            right: vec![lag.w],
        });
    }
    let v = lag_features(signal, t, lag)?.values;
    Ok(alpha.iter().zip(&v).map(|(a, g)| a * g).sum())
}

/// Latent at step `s` by direct summation over the past.
pub fn latent(s: usize, p: &IntensityParams, x: &IntensityInputs) -> f64 {
    let ga: f64 = (0..s)
        .filter(|&u| x.treatments[u] == 1)
        .map(|u| p.treat_kernel.rho.powi((s - u) as i32))
        .sum::<f64>()
        * p.treat_kernel.phi;
    let go: f64 = (0..s)
        .map(|u| p.outcome_kernel.rho.powi((s - u) as i32) * x.outcome_mag[u])
        .sum::<f64>()
        * p.outcome_kernel.phi;
    let gg: f64 = p.alpha.iter().zip(&x.lags[s]).map(|(a, g)| a * g).sum();
    p.beta0 + p.baseline[x.hours[s]] + ga + go + gg
}

/// Latent for every step using the geometric recursions; agrees with
/// [`latent`] up to rounding.
pub fn latent_series(p: &IntensityParams, x: &IntensityInputs) -> Result<Vec<f64>> {
    x.check(p)?;
    let (mut sa, mut so) = (0.0, 0.0);
    let mut out = Vec::with_capacity(x.len());
    for s in 0..x.len() {
        if s > 0 {
            sa = p.treat_kernel.rho * (sa + x.treatments[s - 1] as f64);
            so = p.outcome_kernel.rho * (so + x.outcome_mag[s - 1]);
        }
        let gg: f64 = p.alpha.iter().zip(&x.lags[s]).map(|(a, g)| a * g).sum();
        out.push(p.beta0 + p.baseline[x.hours[s]] + p.treat_kernel.phi * sa + p.outcome_kernel.phi * so + gg);
    }
    Ok(out)
}

/// `clamp(latent^2, 0, 1)`.
pub fn lambda_star(latent: f64) -> f64 {
    (latent * latent).clamp(0.0, 1.0)
}

/// Whether [`lambda_star`] had to clip this latent.
pub fn is_clamped(latent: f64) -> bool {
    latent * latent > 1.0
}

pub fn lambda_series(p: &IntensityParams, x: &IntensityInputs) -> Result<Vec<f64>> {
    Ok(latent_series(p, x)?.into_iter().map(lambda_star).collect())
}

/// Independent Bernoulli draws, one keyed stream per step.
pub fn sample_treatments(lambda: &[f64], seed: u64) -> Result<TreatmentSeries> {
    if let Some((i, l)) = lambda.iter().enumerate().find(|(_, l)| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Contract(format!("intensity {l} at step {i} outside [0, 1]")));
    }
    Ok(TreatmentSeries(
        lambda
            .iter()
            .enumerate()
            .map(|(s, &l)| u8::from(rng::unit(seed, "treatment", &[s as u64]) < l))
            .collect(),
    ))
}

/// Autoregressive simulation: step `s` uses the treatments drawn before it.
/// `x.treatments` is ignored and overwritten.
pub fn simulate_treatments(p: &IntensityParams, x: &IntensityInputs, seed: u64) -> Result<TreatmentSeries> {
    let mut x = x.clone();
    x.treatments = vec![0; x.len()];
    x.check(p)?;
    let (mut sa, mut so) = (0.0, 0.0);
    for s in 0..x.len() {
        if s > 0 {
            sa = p.treat_kernel.rho * (sa + x.treatments[s - 1] as f64);
            so = p.outcome_kernel.rho * (so + x.outcome_mag[s - 1]);
        }
        let gg: f64 = p.alpha.iter().zip(&x.lags[s]).map(|(a, g)| a * g).sum();
        let l = lambda_star(p.beta0 + p.baseline[x.hours[s]] + p.treat_kernel.phi * sa + p.outcome_kernel.phi * so + gg);
        x.treatments[s] = u8::from(rng::unit(seed, "treatment", &[s as u64]) < l);
    }
    Ok(TreatmentSeries(x.treatments))
}

/// Mean binary cross-entropy with probabilities clamped away from 0 and 1.
pub fn bce_intensity(lambda: &[f64], a: &TreatmentSeries) -> Result<f64> {
    if lambda.len() != a.len() {
        return Err(Error::Dimension {
            op: "bce_intensity",
            left: vec![lambda.len()],
            right: vec![a.len()],
        });
    }
    if lambda.is_empty() {
        return Ok(0.0);
    }
    Ok(lambda
        .iter()
        .zip(&a.0)
        .map(|(&l, &y)| bce_term(l, y as f64))
        .sum::<f64>()
        / lambda.len() as f64)
}

/// Differentiable `lambda` column for parameters bound in the order of
/// [`IntensityParams::to_tensors`].
pub fn lambda_tape(tape: &mut Tape, params: &[Var], x: &IntensityInputs) -> Result<Var> {
    let [beta0, baseline, a_phi, a_rho, o_phi, o_rho, alpha] = params else {
        return Err(Error::Contract(format!("expected 7 intensity parameters, got {}", params.len())));
    };
    let n = x.len();
    let w = tape.value(*alpha).len();
    let mut onehot = Tensor::zeros(&[n, HOURS]);
    for (s, &h) in x.hours.iter().enumerate() {
        onehot.set(s, h, 1.0);
    }
    let onehot = tape.constant(onehot);
    let gb = tape.matmul(onehot, *baseline)?;

    let ones = tape.constant(Tensor::full(&[n, 1], 1.0));
    let decayed = |tape: &mut Tape, rho: Var, phi: Var, prev: Vec<f64>| -> Result<Var> {
        let a = tape.mul(ones, rho)?;
        let inc = tape.constant(Tensor::column(prev));
        let b = tape.mul(inc, rho)?;
        let state = tape.scan(a, b)?;
        tape.mul(state, phi)
    };
    let shifted = |v: &[f64]| -> Vec<f64> { std::iter::once(0.0).chain(v.iter().copied()).take(n).collect() };
    let treat: Vec<f64> = x.treatments.iter().map(|&a| a as f64).collect();
    let ga = decayed(tape, *a_rho, *a_phi, shifted(&treat))?;
    let go = decayed(tape, *o_rho, *o_phi, shifted(&x.outcome_mag))?;

    let lags = tape.constant(Tensor::matrix(n, w, x.lags.iter().flatten().copied().collect()));
    let gg = tape.matmul(lags, *alpha)?;

    let mut z = tape.add(gb, *beta0)?;
    for part in [ga, go, gg] {
        z = tape.add(z, part)?;
    }
    let sq = tape.square(z);
    Ok(tape.clamp(sq, 0.0, 1.0))
}

#[cfg(test)]
mod tests;
