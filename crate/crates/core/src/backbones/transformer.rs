use super::layers::{attention_mask, interleave_order, Adapter, Heads, Init, Linear, Mlp};
use super::{Aux, ForwardOut, Integration, ModelConfig, SequenceInput, SequenceModel, FEATURE_DIM};
use crate::error::Result;
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::timeline::DAY;

/// Extra attention head whose keys and values come from the signal.
#[derive(Debug, Clone, Copy)]
struct SignalHead {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

/// Cross-attention from the main stream onto a side MLP over the signal.
#[derive(Debug, Clone, Copy)]
struct SideLayer {
    mlp: Mlp,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ffn: Mlp,
    signal_head: Option<SignalHead>,
    side: Option<SideLayer>,
    adapters: Option<[Adapter; 2]>,
}

/// Pre-norm causal transformer.
#[derive(Debug, Clone)]
pub struct Transformer {
    cfg: ModelConfig,
    store: ParamStore,
    embed: Linear,
    signal_embed: Option<Linear>,
    blocks: Vec<Block>,
    heads: Heads,
}

impl Transformer {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, cfg.seed);
        let d = cfg.d_model;
        let dh = d / cfg.heads;
        let sq = |n: usize| 1.0 / (n as f64).sqrt();
        let embed = init.linear("embed", FEATURE_DIM, d);
        let signal_embed = (cfg.integration != Integration::None).then(|| init.linear("signal_embed", cfg.lag_dim, d));
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let n = |s: &str| format!("block{l}.{s}");
            let wq = init.normal(&n("attn.wq"), d, d, sq(d));
            let wk = init.normal(&n("attn.wk"), d, d, sq(d));
            let wv = init.normal(&n("attn.wv"), d, d, sq(d));
            let wo = init.normal(&n("attn.wo"), d, d, sq(d));
            let ffn = Mlp::new(&mut init, &n("ffn"), d, cfg.hidden, d);
            let signal_head = (cfg.integration == Integration::Attention).then(|| SignalHead {
                wq: init.normal(&n("sig_head.wq"), d, dh, sq(d)),
                wk: init.normal(&n("sig_head.wk"), d, dh, sq(d)),
                wv: init.normal(&n("sig_head.wv"), d, dh, sq(d)),
                wo: init.normal(&n("sig_head.wo"), dh, d, sq(dh)),
            });
            let side = (cfg.integration == Integration::Layer).then(|| SideLayer {
                mlp: Mlp::new(&mut init, &n("side.mlp"), d, cfg.hidden, d),
                wq: init.normal(&n("side.wq"), d, d, sq(d)),
                wk: init.normal(&n("side.wk"), d, d, sq(d)),
                wv: init.normal(&n("side.wv"), d, d, sq(d)),
                wo: init.normal(&n("side.wo"), d, d, sq(d)),
            });
            let adapters = (cfg.integration == Integration::Adapter).then(|| {
                let r = cfg.adapter_rank();
                [
                    Adapter::new(&mut init, &n("adapter_attn"), d, r),
                    Adapter::new(&mut init, &n("adapter_ffn"), d, r),
                ]
            });
            blocks.push(Block {
                wq,
                wk,
                wv,
                wo,
                ffn,
                signal_head,
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

/// `softmax(q k^T / sqrt(dk) + mask) v` and the probability map.
fn attend(tape: &mut Tape, q: Var, k: Var, v: Var, mask: &Tensor) -> Result<(Var, Var)> {
    let dk = tape.value(q).cols() as f64;
    let kt = tape.transpose(k);
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, 1.0 / dk.sqrt());
    let s = tape.add_const(s, mask)?;
    let p = tape.softmax(s);
    Ok((tape.matmul(p, v)?, p))
}

impl SequenceModel for Transformer {
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
        let days: Vec<f64> = input.times.iter().map(|&t| (t - input.t0) as f64 / DAY as f64).collect();

        let token = self.cfg.integration == Integration::Token;
        let (mut h, times, read): (Var, Vec<f64>, Option<Vec<usize>>) = match (token, g) {
            (true, Some(g)) => {
                let both = tape.concat_rows(&[e, g])?;
                let order = interleave_order(n);
                let h = tape.select_rows(both, &order)?;
                let times = days.iter().flat_map(|&t| [t, t]).collect();
                // The signal token of step j is the last token of that step.
                (h, times, Some((0..n).map(|j| 2 * j + 1).collect()))
            }
            _ => (e, days.clone(), None),
        };

        let beta = if self.cfg.integration == Integration::Attention {
            self.cfg.beta_mask
        } else {
            0.0
        };
        let mask = attention_mask(&times, beta);
        let causal = attention_mask(&days, 0.0);
        let dh = self.cfg.d_model / self.cfg.heads;
        let mut maps = Vec::new();

        for b in &self.blocks {
            let a = tape.layer_norm(h);
            let q = tape.matmul(a, p[b.wq])?;
            let k = tape.matmul(a, p[b.wk])?;
            let v = tape.matmul(a, p[b.wv])?;
            let mut outs = Vec::with_capacity(self.cfg.heads);
            for i in 0..self.cfg.heads {
                let qi = tape.slice_cols(q, i * dh, dh)?;
                let ki = tape.slice_cols(k, i * dh, dh)?;
                let vi = tape.slice_cols(v, i * dh, dh)?;
                let (o, pm) = attend(tape, qi, ki, vi, &mask)?;
                outs.push(o);
                maps.push(pm);
            }
            let cat = tape.concat_cols(&outs)?;
            let mut attn = tape.matmul(cat, p[b.wo])?;
            if let (Some(sh), Some(g)) = (b.signal_head, g) {
                let q = tape.matmul(a, p[sh.wq])?;
                let k = tape.matmul(g, p[sh.wk])?;
                let v = tape.matmul(g, p[sh.wv])?;
                let (o, pm) = attend(tape, q, k, v, &mask)?;
                maps.push(pm);
                let o = tape.matmul(o, p[sh.wo])?;
                attn = tape.add(attn, o)?;
            }
            h = tape.add(h, attn)?;
            if let Some(ad) = &b.adapters {
                h = ad[0].apply(tape, p, h, g)?;
            }
            if let (Some(side), Some(g)) = (b.side, g) {
                let hg = side.mlp.apply(tape, p, g)?;
                let a = tape.layer_norm(h);
                let q = tape.matmul(a, p[side.wq])?;
                let k = tape.matmul(hg, p[side.wk])?;
                let v = tape.matmul(hg, p[side.wv])?;
                let (o, _) = attend(tape, q, k, v, &causal)?;
                let o = tape.matmul(o, p[side.wo])?;
                h = tape.add(h, o)?;
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
            aux: Aux::Attention { maps, times },
        })
    }
}
