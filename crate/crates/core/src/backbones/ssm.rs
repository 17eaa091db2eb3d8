use super::layers::{interleave_order, Adapter, Heads, Init, Linear, Mlp};
use super::{Aux, ForwardOut, Integration, ModelConfig, ScanTrace, SequenceInput, SequenceModel, FEATURE_DIM};
use crate::error::Result;
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor};

/// Signal conditioning of the continuous transition,
/// `A(g) = A_0 + dA * sigmoid(W_g e_g + b)`.
#[derive(Debug, Clone, Copy)]
struct Conditioning {
    delta_a: ParamId,
    proj: Linear,
}

#[derive(Debug, Clone)]
struct Block {
    a0: ParamId,
    conditioning: Option<Conditioning>,
    gate: Linear,
    wb: ParamId,
    wc: ParamId,
    skip: ParamId,
    ffn: Mlp,
    /// Layer mode: side MLP over the signal driving the state.
    side: Option<(Mlp, ParamId)>,
    adapters: Option<[Adapter; 2]>,
}

/// Selective diagonal state-space model with zero-order-hold transitions over
/// the irregular gaps between positions.
///
/// Per layer, with `u` the normalized input and `Delta = gap * s`:
///
/// ```text
/// s     = sigmoid(W_s u)            (W_s [u; e_g] in selection mode)
/// A_bar = exp(Delta * A(g))
/// h_t   = A_bar_t * h_{t-1} + Delta_t * (W_B u_t)
/// y_t   = W_C h_t + D * u_t
/// ```
#[derive(Debug, Clone)]
pub struct Ssm {
    cfg: ModelConfig,
    store: ParamStore,
    embed: Linear,
    signal_embed: Option<Linear>,
    blocks: Vec<Block>,
    heads: Heads,
}

impl Ssm {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, cfg.seed);
        let d = cfg.d_model;
        let ns = cfg.state;
        let sq = |n: usize| 1.0 / (n as f64).sqrt();
        let embed = init.linear("embed", FEATURE_DIM, d);
        let signal_embed = (cfg.integration != Integration::None).then(|| init.linear("signal_embed", cfg.lag_dim, d));
        let conditioned = matches!(cfg.integration, Integration::Selection | Integration::Adapter);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let n = |s: &str| format!("block{l}.{s}");
            let a0 = init.uniform(&n("ssm.a0"), 1, ns, -1.0, -0.01);
            let conditioning = conditioned.then(|| Conditioning {
                delta_a: init.normal(&n("ssm.delta_a"), 1, ns, 0.1),
                proj: init.linear(&n("ssm.a_proj"), d, ns),
            });
            let gate_in = if cfg.integration == Integration::Selection { 2 * d } else { d };
            let gate = init.linear(&n("ssm.gate"), gate_in, ns);
            let wb = init.normal(&n("ssm.wb"), d, ns, sq(d));
            let wc = init.normal(&n("ssm.wc"), ns, d, sq(ns));
            let skip = init.fill(&n("ssm.skip"), 1, d, 1.0);
            let ffn = Mlp::new(&mut init, &n("ffn"), d, cfg.hidden, d);
            let side = (cfg.integration == Integration::Layer).then(|| {
                (
                    Mlp::new(&mut init, &n("side.mlp"), d, cfg.hidden, d),
                    init.normal(&n("side.wb"), d, ns, sq(d)),
                )
            });
            let adapters = (cfg.integration == Integration::Adapter).then(|| {
                let r = cfg.adapter_rank();
                [
                    Adapter::new(&mut init, &n("adapter_ssm"), d, r),
                    Adapter::new(&mut init, &n("adapter_ffn"), d, r),
                ]
            });
            blocks.push(Block {
                a0,
                conditioning,
                gate,
                wb,
                wc,
                skip,
                ffn,
                side,
                adapters,
            });
        }
        let heads = Heads::new(&mut init, d);
        Ok(Self {
            cfg,
            store,
            embed,
            signal_embed,
            blocks,
            heads,
        })
    }
}

impl SequenceModel for Ssm {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, input: &SequenceInput) -> Result<ForwardOut> {
        let n = input.len();
        let x = match self.cfg.integration {
            Integration::None => input.signal_free_x(),
            _ => input.x.clone(),
        };
        let x = tape.constant(x);
        let e = self.embed.apply(tape, p, x)?;
        let g = match self.signal_embed {
            Some(se) => {
                let lags = tape.constant(input.lags.clone());
                Some(se.apply(tape, p, lags)?)
            }
            None => None,
        };
        let integration = self.cfg.integration;

        // Token mode interleaves signal tokens with zero gap: they do not
        // advance time and inject through the gate instead of the step size.
        let (mut h, gaps, signal_rows, read) = match (integration, g) {
            (Integration::Token, Some(g)) => {
                let both = tape.concat_rows(&[e, g])?;
                let h = tape.select_rows(both, &interleave_order(n))?;
                let gaps: Vec<f64> = input.gaps.iter().flat_map(|&d| [d, 0.0]).collect();
                let rows: Vec<f64> = (0..n).flat_map(|_| [0.0, 1.0]).collect();
                (h, gaps, Some(rows), Some((0..n).map(|j| 2 * j + 1).collect::<Vec<_>>()))
            }
            _ => (e, input.gaps.clone(), None, None),
        };
        let gaps = tape.constant(Tensor::column(gaps));
        let signal_rows = signal_rows.map(|r| tape.constant(Tensor::column(r)));

        let mut traces = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let u = tape.layer_norm(h);
            let gate_in = match (integration, g) {
                (Integration::Selection, Some(g)) => tape.concat_cols(&[u, g])?,
                _ => u,
            };
            let s = b.gate.apply(tape, p, gate_in)?;
            let s = tape.sigmoid(s);
            let a_cont = match (b.conditioning, g) {
                (Some(c), Some(g)) => {
                    let z = c.proj.apply(tape, p, g)?;
                    let z = tape.sigmoid(z);
                    let shift = tape.mul(z, p[c.delta_a])?;
                    tape.add(shift, p[b.a0])?
                }
                _ => p[b.a0],
            };
            let step = tape.mul(gaps, s)?;
            let expo = tape.mul(step, a_cont)?;
            let transition = tape.exp(expo);
            let drive_scale = match signal_rows {
                Some(rows) => {
                    let sg = tape.mul(rows, s)?;
                    tape.add(step, sg)?
                }
                None => step,
            };
            let mut bx = tape.matmul(u, p[b.wb])?;
            if let (Some((mlp, wb)), Some(g)) = (b.side, g) {
                let hg = mlp.apply(tape, p, g)?;
                let extra = tape.matmul(hg, p[wb])?;
                bx = tape.add(bx, extra)?;
            }
            let drive = tape.mul(bx, drive_scale)?;
            let hidden = tape.scan(transition, drive)?;
            traces.push(ScanTrace { hidden, transition });
            let y = tape.matmul(hidden, p[b.wc])?;
            let du = tape.mul(u, p[b.skip])?;
            let y = tape.add(y, du)?;
            h = tape.add(h, y)?;
            if let Some(ad) = &b.adapters {
                h = ad[0].apply(tape, p, h, g)?;
            }
            let f = tape.layer_norm(h);
            let f = b.ffn.apply(tape, p, f)?;
            h = tape.add(h, f)?;
            if let Some(ad) = &b.adapters {
                h = ad[1].apply(tape, p, h, g)?;
            }
        }
        let mut hf = tape.layer_norm(h);
        if let Some(rows) = &read {
            hf = tape.select_rows(hf, rows)?;
        }
        let (inc, latent, lambda) = self.heads.apply(tape, p, hf)?;
        let prev = tape.constant(input.y_prev.clone());
        let y = tape.add(prev, inc)?;
        Ok(ForwardOut {
            y,
            latent,
            lambda,
            aux: Aux::Ssm { traces },
        })
    }
}
