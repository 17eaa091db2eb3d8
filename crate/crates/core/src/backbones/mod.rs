//! Sequence models over a post's positions: a causal transformer and a
//! selective state-space model, each with several ways of routing the
//! external signal in, behind one [`SequenceModel`] trait.

mod checkpoint;
mod features;
mod layers;
mod ssm;
mod transformer;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use features::{FeatureSpec, SequenceInput, FEATURE_DIM};
pub use ssm::Ssm;
pub use transformer::Transformer;

use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Transformer,
    Ssm,
}

/// How the signal enters the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Signal ignored: the vanilla baseline.
    None,
    /// Signal embeddings interleaved with engagement tokens.
    Token,
    /// Temporally masked attention with a signal head (transformer only).
    Attention,
    /// Signal-conditioned scan gates and transitions (ssm only).
    Selection,
    /// A side MLP over the signal merged into every layer.
    Layer,
    /// Residual bottleneck adapters fed with the signal embedding.
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub integration: Integration,
    pub depth: usize,
    pub d_model: usize,
    pub hidden: usize,
    pub heads: usize,
    pub state: usize,
    /// Temporal attention decay per day of separation.
    pub beta_mask: f64,
    /// Width of the lag feature vector.
    pub lag_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Ssm,
            integration: Integration::Adapter,
            depth: 2,
            d_model: 32,
            hidden: 64,
            heads: 4,
            state: 16,
            beta_mask: 0.1,
            lag_dim: 6,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn adapter_rank(&self) -> usize {
        self.d_model / 8
    }

    pub fn variant_name(&self) -> String {
        let b = match self.backbone {
            Backbone::Transformer => "transformer",
            Backbone::Ssm => "ssm",
        };
        match self.integration {
            Integration::None => b.to_string(),
            i => format!("{b}+{}", integration_name(i)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.depth == 0 || self.d_model == 0 || self.hidden == 0 || self.lag_dim == 0 {
            return bad("depth, d_model, hidden and lag_dim must be positive".into());
        }
        match (self.backbone, self.integration) {
            (Backbone::Transformer, Integration::Selection) => {
                return bad("selection integration needs the ssm backbone".into())
            }
            (Backbone::Ssm, Integration::Attention) => {
                return bad("attention integration needs the transformer backbone".into())
            }
            _ => {}
        }
        if self.backbone == Backbone::Transformer && (self.heads == 0 || self.d_model % self.heads != 0) {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.backbone == Backbone::Ssm && self.state == 0 {
            return bad("state dimension must be positive".into());
        }
        if self.integration == Integration::Adapter && self.adapter_rank() == 0 {
            return bad(format!("adapter rank d/8 is zero for d_model {}", self.d_model));
        }
        if !(self.beta_mask >= 0.0 && self.beta_mask.is_finite()) {
            return bad(format!("beta_mask {} must be finite and >= 0", self.beta_mask));
        }
        Ok(())
    }
}

fn integration_name(i: Integration) -> &'static str {
    match i {
        Integration::None => "none",
        Integration::Token => "token",
        Integration::Attention => "attention",
        Integration::Selection => "selection",
        Integration::Layer => "layer",
        Integration::Adapter => "adapter",
    }
}

/// Per-layer record of the state-space scan.
#[derive(Debug, Clone, Copy)]
pub struct ScanTrace {
    /// `m x n_s` hidden states.
    pub hidden: Var,
    /// `m x n_s` diagonal of the discrete transition that produced each row.
    pub transition: Var,
}

/// Backbone-specific intermediate values used by the auxiliary losses.
#[derive(Debug, Clone)]
pub enum Aux {
    Attention {
        /// Attention probability maps, one per layer and head.
        maps: Vec<Var>,
        /// Time of every attended position, days since posting.
        times: Vec<f64>,
    },
    Ssm {
        traces: Vec<ScanTrace>,
    },
}

#[derive(Debug, Clone)]
pub struct ForwardOut {
    /// `n x 4` predicted normalized cumulative counts.
    pub y: Var,
    /// `n x 1` treatment latent.
    pub latent: Var,
    /// `n x 1` treatment intensity, `clamp(latent^2, 0, 1)`.
    pub lambda: Var,
    pub aux: Aux,
}

/// Plain values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub y: Tensor,
    pub lambda: Tensor,
}

pub trait SequenceModel: Send + Sync + fmt::Debug {
    fn config(&self) -> &ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn forward(&self, tape: &mut Tape, p: &Bound, input: &SequenceInput) -> Result<ForwardOut>;
    fn clone_box(&self) -> Box<dyn SequenceModel>;

    fn predict(&self, input: &SequenceInput) -> Result<Prediction> {
        let mut tape = Tape::new();
        let p = self.params().bind(&mut tape);
        let out = self.forward(&mut tape, &p, input)?;
        Ok(Prediction {
            y: tape.value(out.y).clone(),
            lambda: tape.value(out.lambda).clone(),
        })
    }
}

impl Clone for Box<dyn SequenceModel> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

type Builder = Box<dyn Fn(&ModelConfig) -> Result<Box<dyn SequenceModel>> + Send + Sync>;

/// Model variants by name, e.g. `"ssm+adapter"` or `"transformer"`.
pub struct ModelRegistry {
    entries: BTreeMap<String, Builder>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// The ten built-in variants: both backbones with every applicable
    /// integration, including none.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        for (backbone, modes) in [
            (Backbone::Transformer, Integration::Attention),
            (Backbone::Ssm, Integration::Selection),
        ] {
            for integration in [Integration::None, Integration::Token, modes, Integration::Layer, Integration::Adapter] {
                let cfg = ModelConfig {
                    backbone,
                    integration,
                    ..ModelConfig::default()
                };
                r.register(cfg.variant_name(), move |base: &ModelConfig| {
                    let cfg = ModelConfig {
                        backbone,
                        integration,
                        ..base.clone()
                    };
                    build_model(&cfg)
                });
            }
        }
        r
    }

    pub fn register<F>(&mut self, name: impl Into<String>, f: F)
    where
        F: Fn(&ModelConfig) -> Result<Box<dyn SequenceModel>> + Send + Sync + 'static,
    {
        self.entries.insert(name.into(), Box::new(f));
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    /// Build variant `name`, taking sizes and seed from `base`.
    pub fn build(&self, name: &str, base: &ModelConfig) -> Result<Box<dyn SequenceModel>> {
        let f = self.entries.get(name).ok_or_else(|| Error::Unknown {
            kind: "model variant",
            name: name.to_string(),
        })?;
        f(base)
    }
}

/// Construct the model described by `cfg` directly.
pub fn build_model(cfg: &ModelConfig) -> Result<Box<dyn SequenceModel>> {
    cfg.validate()?;
    Ok(match cfg.backbone {
        Backbone::Transformer => Box::new(Transformer::new(cfg.clone())?),
        Backbone::Ssm => Box::new(Ssm::new(cfg.clone())?),
    })
}
