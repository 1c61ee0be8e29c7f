//! Encoder `f_e`, MLM head `h_g` (tied output embeddings) and RTD head `h_d`.
//!
//! Layers are pre-norm: each sub-layer reads `LN(x)` and adds its output to
//! the residual stream, which passes through a final layer norm.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::EncoderConfig;
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub qkv_w: ParamId,
    pub qkv_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub emb_ln_g: ParamId,
    pub emb_ln_b: ParamId,
    pub layers: Vec<LayerParams>,
    pub final_ln_g: ParamId,
    pub final_ln_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlmHeadParams {
    pub dense_w: ParamId,
    pub dense_b: ParamId,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    /// Separate output table when embeddings are untied.
    pub out_proj: Option<ParamId>,
    pub out_bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RtdHeadParams {
    pub dense_w: ParamId,
    pub dense_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// One encoder with optional heads; ids index into a shared [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: EncoderConfig,
    pub encoder: EncoderParams,
    pub mlm: Option<MlmHeadParams>,
    pub rtd: Option<RtdHeadParams>,
}

struct Init<'a, R> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    prefix: &'a str,
}

impl<R: Rng> Init<'_, R> {
    fn normal(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let dist = Normal::new(0.0f32, INIT_STD).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape");
        self.store.push(format!("{}{name}", self.prefix), t)
    }
    fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.push(format!("{}{name}", self.prefix), Tensor::zeros(shape))
    }
    fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.push(format!("{}{name}", self.prefix), Tensor::full(shape, 1.0))
    }
}

impl Network {
    /// Append freshly initialized parameters to `store` (names prefixed by
    /// `prefix`): normal(0, 0.02) matrices, zero biases, unit layer-norm gains.
    pub fn init<R: Rng>(
        config: &EncoderConfig,
        with_mlm: bool,
        with_rtd: bool,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (h, f, v, k) = (config.hidden, config.ffn, config.vocab, config.seq_len);
        let mut p = Init { store, rng, prefix };
        let tok_emb = p.normal("embed.tok", &[v, h]);
        let pos_emb = p.normal("embed.pos", &[k, h]);
        let emb_ln_g = p.ones("embed.ln.g", &[h]);
        let emb_ln_b = p.zeros("embed.ln.b", &[h]);
        let layers = (0..config.layers)
            .map(|l| LayerParams {
                ln1_g: p.ones(&format!("layer{l}.ln1.g"), &[h]),
                ln1_b: p.zeros(&format!("layer{l}.ln1.b"), &[h]),
                qkv_w: p.normal(&format!("layer{l}.attn.qkv.w"), &[h, 3 * h]),
                qkv_b: p.zeros(&format!("layer{l}.attn.qkv.b"), &[3 * h]),
                out_w: p.normal(&format!("layer{l}.attn.out.w"), &[h, h]),
                out_b: p.zeros(&format!("layer{l}.attn.out.b"), &[h]),
                ln2_g: p.ones(&format!("layer{l}.ln2.g"), &[h]),
                ln2_b: p.zeros(&format!("layer{l}.ln2.b"), &[h]),
                ff1_w: p.normal(&format!("layer{l}.ffn.in.w"), &[h, f]),
                ff1_b: p.zeros(&format!("layer{l}.ffn.in.b"), &[f]),
                ff2_w: p.normal(&format!("layer{l}.ffn.out.w"), &[f, h]),
                ff2_b: p.zeros(&format!("layer{l}.ffn.out.b"), &[h]),
            })
            .collect();
        let final_ln_g = p.ones("final.ln.g", &[h]);
        let final_ln_b = p.zeros("final.ln.b", &[h]);
        let encoder = EncoderParams {
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
            final_ln_g,
            final_ln_b,
        };
        let mlm = with_mlm.then(|| MlmHeadParams {
            dense_w: p.normal("mlm.dense.w", &[h, h]),
            dense_b: p.zeros("mlm.dense.b", &[h]),
            ln_g: p.ones("mlm.ln.g", &[h]),
            ln_b: p.zeros("mlm.ln.b", &[h]),
            out_proj: (!config.tied).then(|| p.normal("mlm.out.w", &[v, h])),
            out_bias: p.zeros("mlm.out.bias", &[v]),
        });
        let rtd = with_rtd.then(|| RtdHeadParams {
            dense_w: p.normal("rtd.dense.w", &[h, h]),
            dense_b: p.zeros("rtd.dense.b", &[h]),
            out_w: p.normal("rtd.out.w", &[h, 1]),
            out_b: p.zeros("rtd.out.b", &[1]),
        });
        Ok(Network {
            config: config.clone(),
            encoder,
            mlm,
            rtd,
        })
    }

    /// All parameter ids owned by this network, in store order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let e = &self.encoder;
        let mut ids = vec![e.tok_emb, e.pos_emb, e.emb_ln_g, e.emb_ln_b];
        for l in &e.layers {
            ids.extend([
                l.ln1_g, l.ln1_b, l.qkv_w, l.qkv_b, l.out_w, l.out_b, l.ln2_g, l.ln2_b, l.ff1_w, l.ff1_b, l.ff2_w,
                l.ff2_b,
            ]);
        }
        ids.extend([e.final_ln_g, e.final_ln_b]);
        if let Some(m) = &self.mlm {
            ids.extend([m.dense_w, m.dense_b, m.ln_g, m.ln_b]);
            ids.extend(m.out_proj);
            ids.push(m.out_bias);
        }
        if let Some(r) = &self.rtd {
            ids.extend([r.dense_w, r.dense_b, r.out_w, r.out_b]);
        }
        ids
    }

    pub fn mlm_param_ids(&self) -> Vec<ParamId> {
        self.mlm.as_ref().map_or(vec![], |m| {
            let mut v = vec![m.dense_w, m.dense_b, m.ln_g, m.ln_b];
            v.extend(m.out_proj);
            v.push(m.out_bias);
            v
        })
    }

    pub fn rtd_param_ids(&self) -> Vec<ParamId> {
        self.rtd
            .as_ref()
            .map_or(vec![], |r| vec![r.dense_w, r.dense_b, r.out_w, r.out_b])
    }
}

/// Counts encoder forward passes over the lifetime of a run.
#[derive(Debug, Default)]
pub struct ForwardCounter(AtomicU64);

impl ForwardCounter {
    pub fn new(start: u64) -> Self {
        ForwardCounter(AtomicU64::new(start))
    }
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

/// Token ids and padding mask for `batch` sequences of equal length, flattened.
#[derive(Clone, Debug)]
pub struct EncoderInput<'a> {
    pub ids: &'a [u32],
    pub pad_mask: &'a [bool],
    pub batch: usize,
}

/// Dropout switch plus the randomness it consumes.
pub struct Mode<'a, R> {
    pub train: bool,
    pub rng: &'a mut R,
}

/// `f_e(x̃)`: returns hidden states `[batch * k, H]`.
pub fn encoder_forward<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    vars: &[Var],
    net: &Network,
    input: &EncoderInput<'_>,
    mode: &mut Mode<'_, R>,
    counter: &ForwardCounter,
) -> Result<Var> {
    let c = &net.config;
    let k = c.seq_len;
    if input.ids.len() != input.batch * k || input.pad_mask.len() != input.ids.len() {
        return Err(Error::ShapeMismatch {
            op: "encoder_forward",
            lhs: vec![input.ids.len()],
            rhs: vec![input.batch, k],
        });
    }
    if let Some(&bad) = input.ids.iter().find(|&&id| id as usize >= c.vocab) {
        return Err(Error::TokenOutOfRange { id: bad, vocab: c.vocab });
    }
    counter.bump();
    let p = |id: ParamId| vars[id.0];
    let e = &net.encoder;
    let drop = if mode.train { c.dropout } else { 0.0 };

    let positions: Vec<u32> = (0..input.batch).flat_map(|_| 0..k as u32).collect();
    let tok = tape.embedding_gather(p(e.tok_emb), input.ids)?;
    let pos = tape.embedding_gather(p(e.pos_emb), &positions)?;
    let x = tape.add(tok, pos)?;
    let x = tape.layernorm(x, p(e.emb_ln_g), p(e.emb_ln_b), LN_EPS)?;
    let mut x = tape.dropout(x, drop, mode.rng);

    for l in &e.layers {
        let h = tape.layernorm(x, p(l.ln1_g), p(l.ln1_b), LN_EPS)?;
        let qkv = tape.linear(h, p(l.qkv_w), p(l.qkv_b))?;
        let att = tape.self_attention(qkv, input.pad_mask, input.batch, k, c.heads, drop, mode.rng)?;
        let att = tape.linear(att, p(l.out_w), p(l.out_b))?;
        let att = tape.dropout(att, drop, mode.rng);
        x = tape.add(x, att)?;

        let h = tape.layernorm(x, p(l.ln2_g), p(l.ln2_b), LN_EPS)?;
        let f = tape.linear(h, p(l.ff1_w), p(l.ff1_b))?;
        let f = tape.gelu(f);
        let f = tape.linear(f, p(l.ff2_w), p(l.ff2_b))?;
        let f = tape.dropout(f, drop, mode.rng);
        x = tape.add(x, f)?;
    }
    tape.layernorm(x, p(e.final_ln_g), p(e.final_ln_b), LN_EPS)
}

/// `h_g` at the given flattened rows (`b * k + i`), returning pre-softmax
/// logits `[rows, |V|]`: `e(x')ᵀ h_g(·) + bias`.
pub fn mlm_logits<T: Scalar>(tape: &mut Tape<T>, vars: &[Var], net: &Network, hidden: Var, rows: &[usize]) -> Result<Var> {
    let head = net
        .mlm
        .as_ref()
        .ok_or_else(|| Error::Invalid("network has no MLM head".into()))?;
    let p = |id: ParamId| vars[id.0];
    let sel = tape.select_rows(hidden, rows)?;
    let t = tape.linear(sel, p(head.dense_w), p(head.dense_b))?;
    let t = tape.gelu(t);
    let t = tape.layernorm(t, p(head.ln_g), p(head.ln_b), LN_EPS)?;
    let table = head.out_proj.map_or(p(net.encoder.tok_emb), p);
    let logits = tape.matmul_nt(t, table)?;
    tape.add_row(logits, p(head.out_bias))
}

/// Log-probabilities over the vocabulary at the given flattened rows only.
pub fn mlm_log_probs<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &[Var],
    net: &Network,
    hidden: Var,
    rows: &[usize],
) -> Result<Var> {
    let logits = mlm_logits(tape, vars, net, hidden, rows)?;
    Ok(tape.log_softmax(logits))
}

/// `h_d` logits at every position, `[batch * k, 1]`.
pub fn rtd_logits<T: Scalar>(tape: &mut Tape<T>, vars: &[Var], net: &Network, hidden: Var) -> Result<Var> {
    let head = net
        .rtd
        .as_ref()
        .ok_or_else(|| Error::Invalid("network has no RTD head".into()))?;
    let p = |id: ParamId| vars[id.0];
    let r = tape.linear(hidden, p(head.dense_w), p(head.dense_b))?;
    let r = tape.gelu(r);
    tape.linear(r, p(head.out_w), p(head.out_b))
}

/// `D(x̃)_j = σ(h_d(f_e(x̃))_j)` at every position.
pub fn rtd_probs<T: Scalar>(tape: &mut Tape<T>, vars: &[Var], net: &Network, hidden: Var) -> Result<Var> {
    let z = rtd_logits(tape, vars, net, hidden)?;
    Ok(tape.sigmoid(z))
}

/// Flatten per-instance position sets into rows of a `[batch * k, H]` matrix.
pub fn flat_rows(positions: &[Vec<usize>], k: usize) -> Result<Vec<usize>> {
    let mut rows = Vec::new();
    for (b, set) in positions.iter().enumerate() {
        for &i in set {
            if i >= k {
                return Err(Error::PositionOutOfRange { pos: i, len: k });
            }
            rows.push(b * k + i);
        }
    }
    Ok(rows)
}
