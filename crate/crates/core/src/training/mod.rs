//! Joint training of the outcome and intensity heads, early stopping on
//! validation RMSE, and autoregressive forecasting.

mod losses;
mod optim;
mod rollout;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use losses::{
    attention_consistency, attention_consistency_exact, joint_loss, temporal_coherence, JointLoss, ATT_SIGMA_DAYS,
};
pub use optim::{clip_grad_norm, AdamW};
pub use rollout::{rollout_normalized, Forecaster, FORECASTER_FILE, MODEL_FILE};

use crate::backbones::{Backbone, FeatureSpec, SequenceInput, SequenceModel};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::intensity::is_clamped;
use crate::numerics::{Tape, Tensor};
use crate::rng;
use crate::timeline::{NormStats, DIMS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the intensity BCE in the joint loss.
    pub alpha: f64,
    /// Weight of the backbone's auxiliary loss.
    pub beta_aux: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Pair-of-pairs sampled per attention map.
    pub att_budget: usize,
    pub lr_schedule: LrSchedule,
    /// Which positions the joint loss is taken over.
    pub loss_steps: LossSteps,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSteps {
    /// Observed snapshots and prediction times alike.
    #[default]
    All,
    /// Only the `K` prediction times; observed positions are context.
    Horizon,
}

impl LossSteps {
    pub fn mask(self, input: &SequenceInput) -> Option<Vec<bool>> {
        match self {
            LossSteps::All => None,
            LossSteps::Horizon => Some((0..input.len()).map(|j| j >= input.n_obs).collect()),
        }
    }
}

/// Learning-rate schedule over the optimizer steps of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` down to zero at the last step of `max_epochs`.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta_aux: 0.1,
            lr: 1e-4,
            weight_decay: 0.01,
            batch: 16,
            patience: 10,
            max_epochs: 30,
            clip_norm: 1.0,
            att_budget: 512,
            lr_schedule: LrSchedule::Constant,
            loss_steps: LossSteps::All,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.beta_aux >= 0.0
            && self.lr >= 0.0
            && self.lr.is_finite()
            && self.weight_decay >= 0.0
            && self.clip_norm >= 0.0
            && self.batch > 0
            && self.max_epochs > 0
            && self.att_budget > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub bce: f64,
    pub aux: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.mse += o.mse;
        self.bce += o.bce;
        self.aux += o.aux;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.total *= s;
        self.mse *= s;
        self.bce *= s;
        self.aux *= s;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossParts,
    pub val: LossParts,
    /// RMSE of rolled-out cumulative counts over the prediction grid.
    pub val_rmse: f64,
    /// Share of intensity outputs whose latent square exceeded 1.
    pub clamp_freq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub n_params: usize,
    /// Losses of the untrained model.
    pub initial: EpochLog,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_rmse: f64,
    /// Where the best model was saved, filled in by callers that save it.
    pub checkpoint: Option<String>,
}

/// Patience-based stopping on a score where lower is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Record `score` for `epoch`; true when it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch >= self.best_epoch + self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

struct PostEval {
    grads: Vec<Tensor>,
    parts: LossParts,
    clamped: usize,
    outputs: usize,
}

/// Teacher-forced loss on one post; gradients only when `grad` is set.
fn evaluate_post(
    model: &dyn SequenceModel,
    input: &SequenceInput,
    cfg: &TrainConfig,
    aux_seed: u64,
    grad: bool,
) -> Result<PostEval> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let out = model.forward(&mut tape, &p, input)?;
    let a_true = Tensor::column(input.treatment.clone());
    let mask = cfg.loss_steps.mask(input);
    let joint = joint_loss(&mut tape, out.y, &input.target, out.lambda, &a_true, cfg.alpha, mask.as_deref())?;
    let aux = match model.config().backbone {
        Backbone::Ssm => temporal_coherence(&mut tape, &out.aux)?,
        Backbone::Transformer => attention_consistency(&mut tape, &out.aux, cfg.att_budget, aux_seed)?,
    };
    let weighted = tape.scale(aux, cfg.beta_aux);
    let total = tape.add(joint.total, weighted)?;
    let latent = tape.value(out.latent);
    let clamped = latent.data().iter().filter(|&&l| is_clamped(l)).count();
    let parts = LossParts {
        total: tape.value(total).item(),
        mse: tape.value(joint.mse).item(),
        bce: tape.value(joint.bce).item(),
        aux: tape.value(aux).item(),
    };
    let grads = if grad && parts.total.is_finite() {
        let g = tape.backward(total)?;
        p.vars().iter().map(|&v| g.get(v)).collect()
    } else {
        Vec::new()
    };
    Ok(PostEval {
        grads,
        parts,
        clamped,
        outputs: latent.len(),
    })
}

/// Root-mean-square error of rolled-out counts against the truth over every
/// post, prediction time and metric.
pub fn rollout_rmse(model: &dyn SequenceModel, norm: &NormStats, inputs: &[SequenceInput]) -> Result<f64> {
    let sq: Vec<(f64, usize)> = inputs
        .par_iter()
        .map(|input| -> Result<(f64, usize)> {
            let traj = rollout_normalized(model, input)?;
            let mut s = 0.0;
            for (k, y) in traj.iter().enumerate() {
                let pred = norm.denormalize(y);
                let truth = norm.denormalize(&SequenceInput::row4(&input.target, input.n_obs + k));
                for m in 0..DIMS {
                    s += (pred[m] - truth[m]).powi(2);
                }
            }
            Ok((s, traj.len() * DIMS))
        })
        .collect::<Result<_>>()?;
    let (s, n) = sq.iter().fold((0.0, 0), |(a, b), (s, n)| (a + s, b + n));
    Ok(if n == 0 { 0.0 } else { (s / n as f64).sqrt() })
}

struct Split {
    train: Vec<SequenceInput>,
    val: Vec<SequenceInput>,
}

fn eval_set(model: &dyn SequenceModel, inputs: &[SequenceInput], cfg: &TrainConfig, epoch: usize) -> Result<(LossParts, usize, usize)> {
    let evals: Vec<PostEval> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| evaluate_post(model, input, cfg, rng::mix(cfg.seed, &[epoch as u64, i as u64, 1]), false))
        .collect::<Result<_>>()?;
    let mut parts = LossParts::default();
    let (mut clamped, mut outputs) = (0, 0);
    for e in &evals {
        parts.add(&e.parts);
        clamped += e.clamped;
        outputs += e.outputs;
    }
    Ok((parts.scaled(1.0 / inputs.len().max(1) as f64), clamped, outputs))
}

fn epoch_log(
    model: &dyn SequenceModel,
    norm: &NormStats,
    data: &Split,
    cfg: &TrainConfig,
    epoch: usize,
    train: Option<(LossParts, f64)>,
) -> Result<EpochLog> {
    let (train, clamp_freq) = match train {
        Some(t) => t,
        None => {
            let (parts, c, n) = eval_set(model, &data.train, cfg, epoch)?;
            (parts, c as f64 / n.max(1) as f64)
        }
    };
    let (val, _, _) = eval_set(model, &data.val, cfg, epoch)?;
    Ok(EpochLog {
        epoch,
        train,
        val,
        val_rmse: rollout_rmse(model, norm, &data.val)?,
        clamp_freq,
    })
}

/// Train `model` on the dataset's train split with early stopping on the
/// validation split. Returns the best-validation model and the report.
pub fn train(
    mut model: Box<dyn SequenceModel>,
    dataset: &Dataset,
    features: &FeatureSpec,
    cfg: &TrainConfig,
) -> Result<(Forecaster, TrainReport)> {
    cfg.validate()?;
    if features.lag.w != model.config().lag_dim {
        return Err(Error::Config(format!(
            "lag feature width {} does not match the model's lag_dim {}",
            features.lag.w,
            model.config().lag_dim
        )));
    }
    if dataset.split.train.is_empty() || dataset.split.val.is_empty() {
        return Err(Error::Config("training needs nonempty train and val splits".into()));
    }
    let features = FeatureSpec {
        window: dataset.window,
        ..features.clone()
    };
    let norm = NormStats::fit(dataset.train());
    let build = |posts: Vec<&crate::timeline::Post>| -> Result<Vec<SequenceInput>> {
        posts.par_iter().map(|p| features.build(p, &dataset.signal, &norm)).collect()
    };
    let data = Split {
        train: build(dataset.train().collect())?,
        val: build(dataset.val().collect())?,
    };

    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let initial = epoch_log(model.as_ref(), &norm, &data, cfg, 0, None)?;
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let total_steps = cfg.max_epochs * data.train.len().div_ceil(cfg.batch);
    let mut step = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", &[epoch as u64]));
        let mut per_post = vec![LossParts::default(); data.train.len()];
        let (mut clamped, mut outputs) = (0usize, 0usize);
        for batch in order.chunks(cfg.batch) {
            let evals: Vec<PostEval> = batch
                .par_iter()
                .map(|&i| {
                    let seed = rng::mix(cfg.seed, &[epoch as u64, i as u64, 0]);
                    evaluate_post(model.as_ref(), &data.train[i], cfg, seed, true)
                })
                .collect::<Result<_>>()?;
            // Serial reduction in batch order keeps training deterministic.
            let mut grads: Vec<Tensor> = model.params().tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            for (&i, e) in batch.iter().zip(&evals) {
                clamped += e.clamped;
                outputs += e.outputs;
                if !e.parts.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        loss: e.parts.total,
                        clamp_freq: clamped as f64 / outputs.max(1) as f64,
                    });
                }
                per_post[i] = e.parts;
                for (acc, g) in grads.iter_mut().zip(&e.grads) {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
            }
            let scale = 1.0 / evals.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            clip_grad_norm(&mut grads, cfg.clip_norm);
            opt.lr = cfg.lr * cfg.lr_schedule.factor(step, total_steps);
            step += 1;
            opt.step(model.params_mut(), &grads)?;
        }
        // Summed in post order so the epoch loss does not depend on the shuffle.
        let mut sum = LossParts::default();
        for p in &per_post {
            sum.add(p);
        }
        let train = sum.scaled(1.0 / data.train.len() as f64);
        let log = epoch_log(
            model.as_ref(),
            &norm,
            &data,
            cfg,
            epoch,
            Some((train, clamped as f64 / outputs.max(1) as f64)),
        )?;
        if !log.val_rmse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: log.val_rmse,
                clamp_freq: log.clamp_freq,
            });
        }
        if stopper.observe(epoch, log.val_rmse) {
            best = model.clone();
        }
        epochs.push(log);
        if stopper.should_stop(epoch) {
            break;
        }
    }

    let (best_epoch, best_val_rmse) = stopper.best();
    let report = TrainReport {
        variant: model.config().variant_name(),
        n_params: model.params().numel(),
        initial,
        stopped_epoch: epochs.last().map_or(0, |e| e.epoch),
        epochs,
        best_epoch,
        best_val_rmse,
        checkpoint: None,
    };
    Ok((
        Forecaster {
            model: best,
            features,
            norm,
        },
        report,
    ))
}
