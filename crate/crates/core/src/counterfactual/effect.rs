use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_cf, Contrast, CounterfactualSpec, InterventionWindow};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::timeline::{Post, SignalTimeline, DIMS, METRIC_NAMES};
use crate::training::Forecaster;

/// Model-estimated effect of a contrast on one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfEffect {
    /// Treated minus reference cumulative counts at the horizon end.
    pub horizon: [f64; DIMS],
    /// The same difference at every prediction time.
    pub trajectory: Vec<[f64; DIMS]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub label: String,
    pub ate_per_metric: [f64; DIMS],
    /// Mean over metrics of `ate_per_metric[m] / std_m`.
    pub ate_normalized: f64,
    /// Percentile bootstrap interval for `ate_normalized`.
    pub ci95: (f64, f64),
    pub n_bootstrap: usize,
    pub n_posts: usize,
    /// Mean per-step effect over posts.
    pub trajectory: Vec<[f64; DIMS]>,
}

impl AteEstimate {
    pub fn half_width(&self) -> f64 {
        (self.ci95.1 - self.ci95.0) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_bootstrap: 200,
            seed: 0,
        }
    }
}

/// Rolls out each distinct counterfactual signal of a post once.
struct PostRollouts<'a> {
    fc: &'a Forecaster,
    post: &'a Post,
    signal: &'a SignalTimeline,
    window: InterventionWindow,
    cache: HashMap<String, Vec<[f64; DIMS]>>,
}

impl<'a> PostRollouts<'a> {
    fn new(fc: &'a Forecaster, post: &'a Post, signal: &'a SignalTimeline) -> Self {
        Self {
            fc,
            post,
            signal,
            window: InterventionWindow::for_post(post.t0, &fc.features.window),
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, spec: Option<&CounterfactualSpec>) -> Result<Vec<[f64; DIMS]>> {
        let key = match spec {
            Some(s) => serde_json::to_string(s)?,
            None => String::new(),
        };
        if let Some(t) = self.cache.get(&key) {
            return Ok(t.clone());
        }
        let traj = match spec {
            Some(s) => self.fc.rollout(self.post, &apply_cf(self.signal, s, &self.window)?)?,
            None => self.fc.rollout(self.post, self.signal)?,
        };
        self.cache.insert(key, traj.clone());
        Ok(traj)
    }

    fn effect(&mut self, contrast: &Contrast) -> Result<CfEffect> {
        let treated = self.get(Some(&contrast.treated))?;
        let reference = self.get(contrast.reference.as_ref())?;
        let trajectory: Vec<[f64; DIMS]> = treated
            .iter()
            .zip(&reference)
            .map(|(a, b)| std::array::from_fn(|m| a[m] - b[m]))
            .collect();
        Ok(CfEffect {
            horizon: trajectory.last().copied().unwrap_or([0.0; DIMS]),
            trajectory,
        })
    }
}

/// `E[Y | treated signal] - E[Y | reference signal]` for one post under the
/// model, at the horizon end and along the prediction grid.
pub fn cf_effect(fc: &Forecaster, post: &Post, signal: &SignalTimeline, contrast: &Contrast) -> Result<CfEffect> {
    PostRollouts::new(fc, post, signal).effect(contrast)
}

/// Effects of every contrast on every listed post: `out[c][i]`.
pub fn effects(fc: &Forecaster, data: &Dataset, posts: &[usize], contrasts: &[Contrast]) -> Result<Vec<Vec<CfEffect>>> {
    let per_post: Vec<Vec<CfEffect>> = posts
        .par_iter()
        .map(|&i| {
            let mut r = PostRollouts::new(fc, &data.posts[i], &data.signal);
            contrasts.iter().map(|c| r.effect(c)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..contrasts.len())
        .map(|c| per_post.iter().map(|row| row[c].clone()).collect())
        .collect())
}

fn normalized(per_metric: &[f64; DIMS], std: &[f64; DIMS]) -> f64 {
    (0..DIMS).map(|m| per_metric[m] / std[m]).sum::<f64>() / DIMS as f64
}

fn mean_horizon<'a>(effects: impl ExactSizeIterator<Item = &'a CfEffect>) -> [f64; DIMS] {
    let n = effects.len() as f64;
    let mut s = [0.0; DIMS];
    for e in effects {
        for m in 0..DIMS {
            s[m] += e.horizon[m];
        }
    }
    s.map(|v| v / n)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// G-computation summary of per-post effects: the population mean and a
/// percentile bootstrap over post resamples. The interval is widened to
/// contain the point estimate when the bootstrap distribution is skewed.
pub fn summarize(label: &str, effects: &[CfEffect], std: &[f64; DIMS], boot: &BootstrapConfig) -> Result<AteEstimate> {
    if boot.n_bootstrap < 100 {
        return Err(Error::Config(format!("need at least 100 bootstrap resamples, got {}", boot.n_bootstrap)));
    }
    if effects.is_empty() {
        return Err(Error::Config("ATE needs at least one post".into()));
    }
    let n = effects.len();
    let ate_per_metric = mean_horizon(effects.iter());
    let ate_normalized = normalized(&ate_per_metric, std);
    let mut stats: Vec<f64> = (0..boot.n_bootstrap)
        .map(|b| {
            let mut r = rng::stream(boot.seed, "bootstrap", &[b as u64]);
            let sample: Vec<&CfEffect> = (0..n).map(|_| &effects[r.random_range(0..n)]).collect();
            normalized(&mean_horizon(sample.into_iter()), std)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let lo = quantile(&stats, 0.025).min(ate_normalized);
    let hi = quantile(&stats, 0.975).max(ate_normalized);
    let k = effects.iter().map(|e| e.trajectory.len()).min().unwrap_or(0);
    let trajectory = (0..k)
        .map(|j| std::array::from_fn(|m| effects.iter().map(|e| e.trajectory[j][m]).sum::<f64>() / n as f64))
        .collect();
    Ok(AteEstimate {
        label: label.to_string(),
        ate_per_metric,
        ate_normalized,
        ci95: (lo, hi),
        n_bootstrap: boot.n_bootstrap,
        n_posts: n,
        trajectory,
    })
}

/// Average treatment effect of `contrast` over `posts` under the model.
pub fn ate_gcomp(
    fc: &Forecaster,
    data: &Dataset,
    posts: &[usize],
    contrast: &Contrast,
    std: &[f64; DIMS],
    boot: &BootstrapConfig,
) -> Result<AteEstimate> {
    let e = effects(fc, data, posts, std::slice::from_ref(contrast))?;
    summarize(&contrast.label, &e[0], std, boot)
}

/// One [`AteEstimate`] per contrast, sharing rollouts across contrasts.
pub fn scenario_grid(
    fc: &Forecaster,
    data: &Dataset,
    posts: &[usize],
    contrasts: &[Contrast],
    std: &[f64; DIMS],
    boot: &BootstrapConfig,
) -> Result<Vec<AteEstimate>> {
    let all = effects(fc, data, posts, contrasts)?;
    contrasts
        .iter()
        .zip(&all)
        .map(|(c, e)| summarize(&c.label, e, std, boot))
        .collect()
}

/// Wide CSV: `scenario, ate, ci_lo, ci_hi, ate_<metric>..., n_posts, n_bootstrap`.
pub fn write_grid_csv(w: impl Write, grid: &[AteEstimate]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["scenario".to_string(), "ate".into(), "ci_lo".into(), "ci_hi".into()];
    header.extend(METRIC_NAMES.iter().map(|m| format!("ate_{m}")));
    header.extend(["n_posts".into(), "n_bootstrap".into()]);
    out.write_record(&header)?;
    for g in grid {
        let mut row = vec![
            g.label.clone(),
            g.ate_normalized.to_string(),
            g.ci95.0.to_string(),
            g.ci95.1.to_string(),
        ];
        row.extend(g.ate_per_metric.iter().map(|v| v.to_string()));
        row.extend([g.n_posts.to_string(), g.n_bootstrap.to_string()]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Long CSV for charting: one row per scenario, quantity and prediction step.
/// `step` is empty for horizon-end rows; `quantity` is `normalized` or a
/// metric name.
pub fn write_grid_long_csv(w: impl Write, grid: &[AteEstimate]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scenario", "quantity", "step", "value", "ci_lo", "ci_hi"])?;
    for g in grid {
        out.write_record([
            g.label.as_str(),
            "normalized",
            "",
            &g.ate_normalized.to_string(),
            &g.ci95.0.to_string(),
            &g.ci95.1.to_string(),
        ])?;
        for (m, name) in METRIC_NAMES.iter().enumerate() {
            out.write_record([g.label.as_str(), name, "", &g.ate_per_metric[m].to_string(), "", ""])?;
            for (k, step) in g.trajectory.iter().enumerate() {
                out.write_record([g.label.as_str(), name, &(k + 1).to_string(), &step[m].to_string(), "", ""])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_grid(dir: &Path, grid: &[AteEstimate]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_grid_csv(std::fs::File::create(dir.join("ate_grid.csv"))?, grid)?;
    write_grid_long_csv(std::fs::File::create(dir.join("ate_grid_long.csv"))?, grid)?;
    std::fs::write(dir.join("ate_grid.json"), serde_json::to_vec_pretty(grid)?)?;
    Ok(())
}
