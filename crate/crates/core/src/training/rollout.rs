use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbones::{load_checkpoint, save_checkpoint, FeatureSpec, SequenceInput, SequenceModel};
use crate::error::Result;
use crate::timeline::{Post, NormStats, SignalTimeline, DIMS};

pub const MODEL_FILE: &str = "model.ckpt";
pub const FORECASTER_FILE: &str = "forecaster.json";

/// Autoregressive forecast over the `K` prediction times of `input`, in
/// normalized space. Each step feeds back the previous (clamped) prediction;
/// predictions never fall below the value they follow.
pub fn rollout_normalized(model: &dyn SequenceModel, input: &SequenceInput) -> Result<Vec<[f64; DIMS]>> {
    let mut input = input.clone();
    let mut out = Vec::with_capacity(input.n_pred());
    for j in input.n_obs..input.len() {
        // Rows after j cannot influence row j, so the prefix suffices.
        let pred = model.predict(&input.prefix(j + 1))?;
        let prev = SequenceInput::row4(&input.y_prev, j);
        let y: [f64; DIMS] = std::array::from_fn(|m| pred.y.get(j, m).max(prev[m]));
        out.push(y);
        if j + 1 < input.len() {
            input.set_prev(j + 1, &y);
        }
    }
    Ok(out)
}

/// A trained model together with the feature layout and normalization it was
/// trained with.
#[derive(Debug, Clone)]
pub struct Forecaster {
    pub model: Box<dyn SequenceModel>,
    pub features: FeatureSpec,
    pub norm: NormStats,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForecasterMeta {
    features: FeatureSpec,
    norm: NormStats,
}

impl Forecaster {
    pub fn input(&self, post: &Post, signal: &SignalTimeline) -> Result<SequenceInput> {
        self.features.build(post, signal, &self.norm)
    }

    /// Predicted cumulative counts at each prediction time, de-normalized and
    /// non-decreasing.
    pub fn rollout(&self, post: &Post, signal: &SignalTimeline) -> Result<Vec<[f64; DIMS]>> {
        let input = self.input(post, signal)?;
        let traj = rollout_normalized(self.model.as_ref(), &input)?;
        let mut floor = [0.0f64; DIMS];
        Ok(traj
            .iter()
            .map(|y| {
                let e = self.norm.denormalize(y);
                for m in 0..DIMS {
                    floor[m] = floor[m].max(e[m]);
                }
                floor
            })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&dir.join(MODEL_FILE), self.model.as_ref())?;
        let meta = ForecasterMeta {
            features: self.features.clone(),
            norm: self.norm,
        };
        std::fs::write(dir.join(FORECASTER_FILE), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let model = load_checkpoint(&dir.join(MODEL_FILE))?;
        let meta: ForecasterMeta = serde_json::from_slice(&std::fs::read(dir.join(FORECASTER_FILE))?)?;
        Ok(Self {
            model,
            features: meta.features,
            norm: meta.norm,
        })
    }
}
