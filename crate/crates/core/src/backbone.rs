//! Small pre-norm transformer encoder.
//!
//! Each block is `x + attn(rmsnorm(x))` followed by `x + ffn(rmsnorm(x))`,
//! with rotary phases on queries and keys and a SiLU-gated feed-forward. A
//! final RMSNorm produces the per-flow hidden states.
//!
//! The weights are randomly initialized rather than pretrained. By default
//! they stay frozen and act as a fixed token mixer that still conducts
//! gradients back to the tokenizer.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Scalar, ShapeError, Tape, Tensor, Var};
use crate::tokenizer::init_uniform;

pub const RMS_EPS: f64 = 1e-5;
pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Causal,
    #[default]
    Bidirectional,
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Causal => "causal",
            MaskMode::Bidirectional => "bidirectional",
        })
    }
}

impl FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "causal" => Ok(MaskMode::Causal),
            "bidirectional" => Ok(MaskMode::Bidirectional),
            other => Err(format!("unknown mask mode '{other}' (expected causal or bidirectional)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub mode: MaskMode,
    pub seq_len: usize,
}

impl AttentionMask {
    pub fn allows(&self, query: usize, key: usize) -> bool {
        match self.mode {
            MaskMode::Causal => key <= query,
            MaskMode::Bidirectional => true,
        }
    }

    pub fn allowed_pairs(&self) -> usize {
        let n = self.seq_len;
        match self.mode {
            MaskMode::Causal => n * (n + 1) / 2,
            MaskMode::Bidirectional => n * n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq: usize,
    pub mask_mode: MaskMode,
    pub rope_enabled: bool,
    pub frozen: bool,
    pub rng_seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            max_seq: 64,
            mask_mode: MaskMode::Bidirectional,
            rope_enabled: true,
            frozen: true,
            rng_seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.max_seq == 0 {
            return Err(Error::Config("backbone dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "n_heads {} does not divide d_model {}",
                self.n_heads, self.d_model
            )));
        }
        if self.rope_enabled && !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rotary encoding needs an even head dimension, got {}",
                self.head_dim()
            )));
        }
        Ok(())
    }
}

/// Gated feed-forward width: `8/3 * d_model` rounded up to a multiple of 8.
pub fn ffn_hidden(d_model: usize) -> usize {
    (8 * d_model / 3).div_ceil(8) * 8
}

/// `(cos, sin)` tables of shape `[seq, head_dim]` in half-split layout:
/// column `i` and `i + head_dim/2` share frequency `base^(-2i/head_dim)`.
pub fn rope_tables(seq: usize, head_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let half = head_dim / 2;
    let mut cos = vec![0.0; seq * head_dim];
    let mut sin = vec![0.0; seq * head_dim];
    for s in 0..seq {
        for i in 0..half {
            let theta = s as f64 * ROPE_BASE.powf(-2.0 * i as f64 / head_dim as f64);
            for col in [i, i + half] {
                cos[s * head_dim + col] = theta.cos();
                sin[s * head_dim + col] = theta.sin();
            }
        }
    }
    (cos, sin)
}

/// Softmax of scaled dot products over allowed keys; masked pairs are exactly 0.
///
/// `q` and `k` have shape `[..., seq, head_dim]`.
pub fn attention_weights<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, mask: AttentionMask) -> Result<Var, ShapeError> {
    let rank = tape.shape(k).len();
    let dh = tape.shape(q)[rank - 1];
    let kt = tape.transpose(k, rank - 2, rank - 1)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, T::lit(1.0 / (dh as f64).sqrt()));
    match mask.mode {
        MaskMode::Causal => tape.causal_softmax(scores),
        MaskMode::Bidirectional => tape.softmax(scores, rank - 1),
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    attn_norm: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ffn_norm: ParamId,
    w_gate: ParamId,
    w_up: ParamId,
    w_down: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    blocks: Vec<Block>,
    final_norm: ParamId,
}

impl Backbone {
    pub const PREFIX: &'static str = "backbone.";

    /// Registers all backbone parameters, seeded from `cfg.rng_seed`, and
    /// applies `cfg.frozen`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let d = cfg.d_model;
        let hidden = ffn_hidden(d);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let mut add = |name: &str, shape: &[usize], fan_in: usize| {
                store.add(format!("backbone.{l}.{name}"), init_uniform(&mut rng, shape, fan_in))
            };
            let wq = add("wq", &[d, d], d);
            let wk = add("wk", &[d, d], d);
            let wv = add("wv", &[d, d], d);
            let wo = add("wo", &[d, d], d);
            let w_gate = add("w_gate", &[d, hidden], d);
            let w_up = add("w_up", &[d, hidden], d);
            let w_down = add("w_down", &[hidden, d], hidden);
            let attn_norm = store.add(format!("backbone.{l}.attn_norm"), Tensor::full(&[d], T::one()));
            let ffn_norm = store.add(format!("backbone.{l}.ffn_norm"), Tensor::full(&[d], T::one()));
            blocks.push(Block {
                attn_norm,
                wq,
                wk,
                wv,
                wo,
                ffn_norm,
                w_gate,
                w_up,
                w_down,
            });
        }
        let final_norm = store.add("backbone.final_norm", Tensor::full(&[d], T::one()));
        let backbone = Self { cfg, blocks, final_norm };
        backbone.freeze(store, backbone.cfg.frozen);
        Ok(backbone)
    }

    /// Marks every backbone parameter frozen (or trainable). Frozen weights
    /// are skipped by the optimizer but still pass gradients upstream.
    pub fn freeze<T: Scalar>(&self, store: &mut ParamStore<T>, frozen: bool) {
        store.set_frozen_prefix(Self::PREFIX, frozen);
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .blocks
            .iter()
            .flat_map(|b| [b.attn_norm, b.wq, b.wk, b.wv, b.wo, b.ffn_norm, b.w_gate, b.w_up, b.w_down])
            .collect();
        ids.push(self.final_norm);
        ids
    }

    /// `[batch, seq, d_model]` in, same shape out.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(tape, store, x)?.0)
    }

    /// Like [`forward`](Self::forward), also returning each layer's attention
    /// weights `[batch, heads, seq, seq]`.
    pub fn forward_traced<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.cfg.d_model {
            return Err(ShapeError::new(
                "backbone",
                format!("expected [batch, seq, {}], got {shape:?}", self.cfg.d_model),
            )
            .into());
        }
        let (b, s) = (shape[0], shape[1]);
        if s > self.cfg.max_seq {
            return Err(Error::SeqTooLong {
                len: s,
                max: self.cfg.max_seq,
            });
        }
        let (h, dh) = (self.cfg.n_heads, self.cfg.head_dim());
        let eps = T::lit(RMS_EPS);
        let mask = AttentionMask {
            mode: self.cfg.mask_mode,
            seq_len: s,
        };
        let rope = if self.cfg.rope_enabled {
            let (cos, sin) = rope_tables(s, dh);
            let cast = |v: Vec<f64>| Tensor::new(vec![s, dh], v.into_iter().map(T::lit).collect());
            Some((tape.constant(cast(cos)?), tape.constant(cast(sin)?)))
        } else {
            None
        };
        let split_heads = |tape: &mut Tape<T>, v: Var| -> Result<Var, ShapeError> {
            let v = tape.reshape(v, &[b, s, h, dh])?;
            tape.transpose(v, 1, 2)
        };
        let mut attn = Vec::with_capacity(self.blocks.len());
        let mut x = x;
        for blk in &self.blocks {
            let p = |tape: &mut Tape<T>, id| tape.param(store, id);
            let norm_w = p(tape, blk.attn_norm);
            let hn = tape.rmsnorm(x, norm_w, eps)?;
            let (wq, wk, wv, wo) = (p(tape, blk.wq), p(tape, blk.wk), p(tape, blk.wv), p(tape, blk.wo));
            let q = tape.matmul(hn, wq)?;
            let q = split_heads(tape, q)?;
            let k = tape.matmul(hn, wk)?;
            let k = split_heads(tape, k)?;
            let v = tape.matmul(hn, wv)?;
            let v = split_heads(tape, v)?;
            let (q, k) = match rope {
                Some((cos, sin)) => (apply_rope(tape, q, cos, sin)?, apply_rope(tape, k, cos, sin)?),
                None => (q, k),
            };
            let weights = attention_weights(tape, q, k, mask)?;
            attn.push(weights);
            let ctx = tape.matmul(weights, v)?;
            let ctx = tape.transpose(ctx, 1, 2)?;
            let ctx = tape.reshape(ctx, &[b, s, h * dh])?;
            let out = tape.matmul(ctx, wo)?;
            x = tape.add(x, out)?;

            let norm_w = p(tape, blk.ffn_norm);
            let hn = tape.rmsnorm(x, norm_w, eps)?;
            let (wg, wu, wd) = (p(tape, blk.w_gate), p(tape, blk.w_up), p(tape, blk.w_down));
            let gate = tape.matmul(hn, wg)?;
            let gate = tape.silu(gate);
            let up = tape.matmul(hn, wu)?;
            let inner = tape.mul(gate, up)?;
            let out = tape.matmul(inner, wd)?;
            x = tape.add(x, out)?;
        }
        let norm_w = tape.param(store, self.final_norm);
        Ok((tape.rmsnorm(x, norm_w, eps)?, attn))
    }
}

/// `x * cos + rotate_half(x) * sin` over the last axis.
fn apply_rope<T: Scalar>(tape: &mut Tape<T>, x: Var, cos: Var, sin: Var) -> Result<Var, ShapeError> {
    let rank = tape.shape(x).len();
    let half = tape.shape(x)[rank - 1] / 2;
    let lo = tape.slice(x, rank - 1, 0, half)?;
    let hi = tape.slice(x, rank - 1, half, half)?;
    let neg_hi = tape.scale(hi, -T::one());
    let rotated = tape.concat(&[neg_hi, lo], rank - 1)?;
    let a = tape.mul(x, cos)?;
    let b = tape.mul(rotated, sin)?;
    tape.add(a, b)
}
