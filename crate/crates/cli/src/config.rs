use std::path::Path;

use exocausal::backbones::{FeatureSpec, ModelConfig};
use exocausal::counterfactual::{standard_grid, BootstrapConfig, Contrast};
use exocausal::synthgen::{DatasetConfig, DgpParams, SignalConfig};
use exocausal::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.json";

/// Everything a pipeline run depends on. Every section is optional in the
/// file; missing fields take library defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. Resolution copies it into every per-component seed.
    pub seed: u64,
    pub signal: SignalConfig,
    pub dgp: DgpParams,
    pub dataset: DatasetConfig,
    pub features: FeatureSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub counterfactual: CounterfactualConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterfactualConfig {
    /// Contrasts to estimate; empty means the standard nine-scenario grid.
    pub contrasts: Vec<Contrast>,
    pub bootstrap: BootstrapConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Schema {
                path: if path == "." { "<root>".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })
    }

    /// Apply the command-line seed, propagate the master seed, align the
    /// feature window with the dataset's, and validate every section.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.counterfactual.bootstrap.seed = self.seed;
        self.features.window = self.dataset.window;
        self.model.lag_dim = self.features.lag.w;
        let check = |r: exocausal::Result<()>| r.map_err(CliError::Invalid);
        check(self.signal.scenario(self.seed).map(|_| ()))?;
        check(self.dgp.validate())?;
        check(self.dataset.window.validate())?;
        check(self.model.validate())?;
        check(self.train.validate())?;
        if self.counterfactual.bootstrap.n_bootstrap < 100 {
            return Err(CliError::Invalid(exocausal::Error::Config(format!(
                "counterfactual.bootstrap.n_bootstrap must be at least 100, got {}",
                self.counterfactual.bootstrap.n_bootstrap
            ))));
        }
        Ok(self)
    }

    pub fn contrasts(&self) -> Vec<Contrast> {
        if self.counterfactual.contrasts.is_empty() {
            standard_grid(self.seed)
        } else {
            self.counterfactual.contrasts.clone()
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
