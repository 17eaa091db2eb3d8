use serde::{Deserialize, Serialize};

use super::{post_params, true_ate, DatasetConfig, DgpParams, SignalScenario, SourceSpec};
use crate::counterfactual::Contrast;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::timeline::DIMS;

/// Population-average true effect of one contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAte {
    pub label: String,
    pub per_metric: [f64; DIMS],
    /// Mean over metrics of `per_metric[m] / std_m` (training-split std).
    pub normalized: f64,
}

/// Everything needed to regenerate a synthetic dataset, plus its true effects
/// on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub seed: u64,
    pub params: DgpParams,
    pub scenario: SignalScenario,
    pub dataset: DatasetConfig,
    pub sources: Vec<SourceSpec>,
    pub metric_std: [f64; DIMS],
    pub ates: Vec<OracleAte>,
}

impl Oracle {
    pub fn build(
        seed: u64,
        params: &DgpParams,
        scenario: &SignalScenario,
        cfg: &DatasetConfig,
        data: &Dataset,
        contrasts: &[Contrast],
    ) -> Result<Self> {
        let sources = cfg.resolved_sources(params);
        let ates = contrasts
            .iter()
            .map(|c| oracle_ate(data, params, &sources, c, &data.split.test))
            .collect::<Result<_>>()?;
        Ok(Self {
            seed,
            params: params.clone(),
            scenario: scenario.clone(),
            dataset: cfg.clone(),
            sources,
            metric_std: data.metric_std(),
            ates,
        })
    }
}

/// Mean of the per-post true effect over `posts`, each post using its
/// source's gain.
pub fn oracle_ate(data: &Dataset, p: &DgpParams, sources: &[SourceSpec], contrast: &Contrast, posts: &[usize]) -> Result<OracleAte> {
    if posts.is_empty() {
        return Err(Error::Config("oracle ATE needs at least one post".into()));
    }
    let mut sum = [0.0; DIMS];
    for &i in posts {
        let post = &data.posts[i];
        let eta = sources
            .iter()
            .find(|s| s.name == post.user_ref)
            .map(|s| s.eta)
            .ok_or_else(|| Error::Unknown {
                kind: "source",
                name: post.user_ref.clone(),
            })?;
        let pp = post_params(p, eta, &data.window);
        let d = true_ate(&data.signal, contrast, post.t0, &pp, &data.window)?;
        for (s, v) in sum.iter_mut().zip(d) {
            *s += v;
        }
    }
    let per_metric = sum.map(|s| s / posts.len() as f64);
    let std = data.metric_std();
    let normalized = (0..DIMS).map(|m| per_metric[m] / std[m]).sum::<f64>() / DIMS as f64;
    Ok(OracleAte {
        label: contrast.label.clone(),
        per_metric,
        normalized,
    })
}
