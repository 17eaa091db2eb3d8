use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bce, composite_score, rmse};
use crate::backbones::SequenceInput;
use crate::counterfactual::{apply_cf, CounterfactualSpec, InterventionWindow};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::timeline::{prediction_grid, DAY, DIMS};
use crate::training::{rollout_normalized, Forecaster};

/// Held-out accuracy of a forecaster over the prediction horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub n_posts: usize,
    /// Prediction times per post.
    pub k: usize,
    pub horizon_days: f64,
    /// On the normalized training scale.
    pub rmse: f64,
    pub rmse_per_metric: [f64; DIMS],
    /// On raw counts, after the monotone clamp.
    pub rmse_counts: f64,
    /// Teacher-forced treatment-intensity BCE over every position.
    pub bce: f64,
}

struct PostScores {
    pred: Vec<[f64; DIMS]>,
    truth: Vec<[f64; DIMS]>,
    pred_counts: Vec<[f64; DIMS]>,
    truth_counts: Vec<[f64; DIMS]>,
    lambda: Vec<f64>,
    treated: Vec<f64>,
}

fn score_post(fc: &Forecaster, data: &Dataset, i: usize) -> Result<PostScores> {
    let post = &data.posts[i];
    let input = fc.input(post, &data.signal)?;
    let pred = rollout_normalized(fc.model.as_ref(), &input)?;
    let truth = (input.n_obs..input.len()).map(|j| SequenceInput::row4(&input.target, j)).collect();
    let truth_counts = prediction_grid(post.t0, &fc.features.window)
        .into_iter()
        .map(|t| post.history().value_at(t).to_f64())
        .collect();
    let lambda = fc.model.predict(&input)?.lambda.data().to_vec();
    Ok(PostScores {
        pred,
        truth,
        pred_counts: fc.rollout(post, &data.signal)?,
        truth_counts,
        lambda,
        treated: input.treatment,
    })
}

pub fn evaluate(fc: &Forecaster, data: &Dataset, posts: &[usize]) -> Result<EvalReport> {
    if posts.is_empty() {
        return Err(Error::Config("evaluation needs at least one post".into()));
    }
    let scored: Vec<PostScores> = posts.par_iter().map(|&i| score_post(fc, data, i)).collect::<Result<_>>()?;
    let pred: Vec<_> = scored.iter().map(|s| s.pred.clone()).collect();
    let truth: Vec<_> = scored.iter().map(|s| s.truth.clone()).collect();
    let mut rmse_per_metric = [0.0; DIMS];
    for (m, r) in rmse_per_metric.iter_mut().enumerate() {
        let (mut sq, mut n) = (0.0, 0usize);
        for (p, t) in pred.iter().zip(&truth) {
            for (a, b) in p.iter().zip(t) {
                sq += (a[m] - b[m]).powi(2);
                n += 1;
            }
        }
        *r = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };
    }
    let lambda: Vec<f64> = scored.iter().flat_map(|s| s.lambda.iter().copied()).collect();
    let treated: Vec<f64> = scored.iter().flat_map(|s| s.treated.iter().copied()).collect();
    let window = fc.features.window;
    Ok(EvalReport {
        variant: fc.model.config().variant_name(),
        n_posts: posts.len(),
        k: window.k(),
        horizon_days: window.horizon as f64 / DAY as f64,
        rmse: rmse(&pred, &truth)?,
        rmse_per_metric,
        rmse_counts: rmse(
            &scored.iter().map(|s| s.pred_counts.clone()).collect::<Vec<_>>(),
            &scored.iter().map(|s| s.truth_counts.clone()).collect::<Vec<_>>(),
        )?,
        bce: bce(&lambda, &treated)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfluence {
    pub source: String,
    pub n_posts: usize,
    /// Mean composite-score effect of the signal on the source's posts, in
    /// counts.
    pub effect: f64,
    /// Share of the dataset's per-post effects lying strictly below `effect`.
    pub score: f64,
}

/// Composite horizon-end effect of removing the signal from one post's
/// horizon: factual forecast minus signal-free forecast.
fn composite_effect(fc: &Forecaster, data: &Dataset, i: usize) -> Result<f64> {
    let post = &data.posts[i];
    let window = InterventionWindow::for_post(post.t0, &fc.features.window);
    let zeroed = apply_cf(&data.signal, &CounterfactualSpec::exposure(0.0, 0), &window)?;
    let end = |traj: Vec<[f64; DIMS]>| traj.last().map_or(0.0, composite_score);
    Ok(end(fc.rollout(post, &data.signal)?) - end(fc.rollout(post, &zeroed)?))
}

fn effects(fc: &Forecaster, data: &Dataset, posts: &[usize]) -> Result<Vec<f64>> {
    posts.par_iter().map(|&i| composite_effect(fc, data, i)).collect()
}

/// Ascending per-post composite effects of `posts`, the reference
/// distribution for [`influence_score`].
pub fn influence_reference(fc: &Forecaster, data: &Dataset, posts: &[usize]) -> Result<Vec<f64>> {
    let mut r = effects(fc, data, posts)?;
    r.sort_by(f64::total_cmp);
    Ok(r)
}

/// `#{r in sorted : r < x} / len`, so a zero effect against a reference of
/// zeros scores 0.
fn share_below(sorted: &[f64], x: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.partition_point(|&r| r < x) as f64 / sorted.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Influence of one source: where the mean composite effect of the signal on
/// its posts falls within an ascending `reference` of per-post effects.
pub fn influence_score(fc: &Forecaster, data: &Dataset, source_posts: &[usize], reference: &[f64]) -> Result<f64> {
    if source_posts.is_empty() {
        return Err(Error::Config("influence needs a source with at least one post".into()));
    }
    Ok(share_below(reference, mean(&effects(fc, data, source_posts)?)))
}

/// Scores for every source among `posts`, in source-name order. The
/// reference distribution is the per-post effects of all of `posts`.
pub fn influence_scores(fc: &Forecaster, data: &Dataset, posts: &[usize]) -> Result<Vec<SourceInfluence>> {
    if posts.is_empty() {
        return Err(Error::Config("influence needs at least one post".into()));
    }
    let all = effects(fc, data, posts)?;
    let mut reference = all.clone();
    reference.sort_by(f64::total_cmp);
    let mut by_source: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (&i, &e) in posts.iter().zip(&all) {
        by_source.entry(data.posts[i].user_ref.as_str()).or_default().push(e);
    }
    Ok(by_source
        .into_iter()
        .map(|(source, e)| {
            let effect = mean(&e);
            SourceInfluence {
                source: source.to_string(),
                n_posts: e.len(),
                effect,
                score: share_below(&reference, effect),
            }
        })
        .collect())
}

pub fn write_influence_csv(w: impl Write, rows: &[SourceInfluence]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["source", "n_posts", "effect", "score"])?;
    for r in rows {
        out.write_record([r.source.clone(), r.n_posts.to_string(), r.effect.to_string(), r.score.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
