//! Pre-norm transformer blocks, on the tape and as a tape-free incremental
//! decoder used by greedy search.
//!
//! The incremental path calls the same tensor kernels in the same order as the
//! tape path, so a cached decoding step reproduces the corresponding row of a
//! full teacher-forced pass bit for bit.

use rand::Rng;
use styled2t_autograd::tensor::{self, Mask};
use styled2t_autograd::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderLayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ffn: FeedForwardParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderLayerParams {
    pub ln1: LayerNormParams,
    pub self_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln3: LayerNormParams,
    pub ffn: FeedForwardParams,
}

/// Shape of one transformer stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackShape {
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
}

impl StackShape {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 {
            return Err(Error::ConfigInvalid("layer and head counts must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::ConfigInvalid(format!(
                "model width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

fn layer_norm_params(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<LayerNormParams> {
    Ok(LayerNormParams {
        gamma: store.ones(&format!("{prefix}.gamma"), 1, dim)?,
        beta: store.zeros(&format!("{prefix}.beta"), 1, dim)?,
    })
}

fn attention_params<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Result<AttentionParams> {
    Ok(AttentionParams {
        wq: store.xavier(&format!("{prefix}.wq"), dim, dim, rng)?,
        bq: store.zeros(&format!("{prefix}.bq"), 1, dim)?,
        wk: store.xavier(&format!("{prefix}.wk"), dim, dim, rng)?,
        bk: store.zeros(&format!("{prefix}.bk"), 1, dim)?,
        wv: store.xavier(&format!("{prefix}.wv"), dim, dim, rng)?,
        bv: store.zeros(&format!("{prefix}.bv"), 1, dim)?,
        wo: store.xavier(&format!("{prefix}.wo"), dim, dim, rng)?,
        bo: store.zeros(&format!("{prefix}.bo"), 1, dim)?,
    })
}

fn ffn_params<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, ff: usize, rng: &mut R) -> Result<FeedForwardParams> {
    Ok(FeedForwardParams {
        w1: store.xavier(&format!("{prefix}.w1"), dim, ff, rng)?,
        b1: store.zeros(&format!("{prefix}.b1"), 1, ff)?,
        w2: store.xavier(&format!("{prefix}.w2"), ff, dim, rng)?,
        b2: store.zeros(&format!("{prefix}.b2"), 1, dim)?,
    })
}

pub fn register_encoder<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    shape: StackShape,
    rng: &mut R,
) -> Result<Vec<EncoderLayerParams>> {
    shape.validate()?;
    (0..shape.layers)
        .map(|l| {
            let p = format!("{prefix}.{l}");
            Ok(EncoderLayerParams {
                ln1: layer_norm_params(store, &format!("{p}.ln1"), shape.dim)?,
                attn: attention_params(store, &format!("{p}.attn"), shape.dim, rng)?,
                ln2: layer_norm_params(store, &format!("{p}.ln2"), shape.dim)?,
                ffn: ffn_params(store, &format!("{p}.ffn"), shape.dim, shape.ff_dim, rng)?,
            })
        })
        .collect()
}

pub fn register_decoder<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    shape: StackShape,
    rng: &mut R,
) -> Result<Vec<DecoderLayerParams>> {
    shape.validate()?;
    (0..shape.layers)
        .map(|l| {
            let p = format!("{prefix}.{l}");
            Ok(DecoderLayerParams {
                ln1: layer_norm_params(store, &format!("{p}.ln1"), shape.dim)?,
                self_attn: attention_params(store, &format!("{p}.self_attn"), shape.dim, rng)?,
                ln2: layer_norm_params(store, &format!("{p}.ln2"), shape.dim)?,
                cross_attn: attention_params(store, &format!("{p}.cross_attn"), shape.dim, rng)?,
                ln3: layer_norm_params(store, &format!("{p}.ln3"), shape.dim)?,
                ffn: ffn_params(store, &format!("{p}.ffn"), shape.dim, shape.ff_dim, rng)?,
            })
        })
        .collect()
}

pub fn register_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<LayerNormParams> {
    layer_norm_params(store, prefix, dim)
}

fn ln(tape: &mut Tape, p: &LayerNormParams, x: Var) -> Var {
    let (g, b) = (tape.param(p.gamma), tape.param(p.beta));
    tape.layer_norm(x, g, b)
}

pub fn layer_norm(tape: &mut Tape, p: &LayerNormParams, x: Var) -> Var {
    ln(tape, p, x)
}

fn attention(tape: &mut Tape, p: &AttentionParams, query: Var, keys: Var, heads: usize, mask: &Mask) -> Var {
    let (wq, bq, wk, bk, wv, bv, wo, bo) = (
        tape.param(p.wq),
        tape.param(p.bq),
        tape.param(p.wk),
        tape.param(p.bk),
        tape.param(p.wv),
        tape.param(p.bv),
        tape.param(p.wo),
        tape.param(p.bo),
    );
    let q = tape.affine(query, wq, bq);
    let k = tape.affine(keys, wk, bk);
    let v = tape.affine(keys, wv, bv);
    let dim = tape.shape(q).1;
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
        let kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
        let vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
        let scores = tape.matmul_bt(qh, kh);
        let scores = tape.scale(scores, scale);
        let probs = tape.softmax(scores, mask);
        ctx.push(tape.matmul(probs, vh));
    }
    let ctx = if heads == 1 { ctx[0] } else { tape.concat_cols(&ctx) };
    tape.affine(ctx, wo, bo)
}

fn feed_forward(tape: &mut Tape, p: &FeedForwardParams, x: Var) -> Var {
    let (w1, b1, w2, b2) = (tape.param(p.w1), tape.param(p.b1), tape.param(p.w2), tape.param(p.b2));
    let h = tape.affine(x, w1, b1);
    let h = tape.gelu(h);
    tape.affine(h, w2, b2)
}

/// Bidirectional encoder stack; `mask` hides padding keys.
pub fn encode(tape: &mut Tape, layers: &[EncoderLayerParams], x: Var, heads: usize, mask: &Mask) -> Var {
    let mut x = x;
    for l in layers {
        let h = ln(tape, &l.ln1, x);
        let a = attention(tape, &l.attn, h, h, heads, mask);
        x = tape.add(x, a);
        let h = ln(tape, &l.ln2, x);
        let f = feed_forward(tape, &l.ffn, h);
        x = tape.add(x, f);
    }
    x
}

/// Causal decoder stack attending to `memory`.
pub fn decode(tape: &mut Tape, layers: &[DecoderLayerParams], x: Var, memory: Var, heads: usize) -> Var {
    let mut x = x;
    for l in layers {
        let h = ln(tape, &l.ln1, x);
        let a = attention(tape, &l.self_attn, h, h, heads, &Mask::Causal { offset: 0 });
        x = tape.add(x, a);
        let h = ln(tape, &l.ln2, x);
        let c = attention(tape, &l.cross_attn, h, memory, heads, &Mask::Full);
        x = tape.add(x, c);
        let h = ln(tape, &l.ln3, x);
        let f = feed_forward(tape, &l.ffn, h);
        x = tape.add(x, f);
    }
    x
}

// ---- tape-free incremental decoding ----

fn affine_t(store: &ParamStore, x: &Tensor, w: ParamId, b: ParamId) -> Tensor {
    x.matmul(store.get(w)).add_row(store.get(b))
}

fn ln_t(store: &ParamStore, p: &LayerNormParams, x: &Tensor) -> Tensor {
    tensor::layer_norm_rows(x, store.get(p.gamma), store.get(p.beta)).0
}

fn attend_t(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Tensor {
    let dh = q.cols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let parts: Vec<Tensor> = (0..heads)
        .map(|h| {
            let qh = q.slice_cols(h * dh, (h + 1) * dh);
            let kh = k.slice_cols(h * dh, (h + 1) * dh);
            let vh = v.slice_cols(h * dh, (h + 1) * dh);
            let scores = qh.matmul_bt(&kh).map(|x| x * scale);
            tensor::softmax_rows(&scores).matmul(&vh)
        })
        .collect();
    if heads == 1 {
        parts.into_iter().next().expect("one head")
    } else {
        Tensor::concat_cols(&parts.iter().collect::<Vec<_>>())
    }
}

struct LayerCache {
    self_k: Tensor,
    self_v: Tensor,
    cross_k: Tensor,
    cross_v: Tensor,
}

/// Key/value cache for greedy decoding one sequence.
pub struct IncrementalDecoder<'a> {
    store: &'a ParamStore,
    layers: &'a [DecoderLayerParams],
    heads: usize,
    cache: Vec<LayerCache>,
}

impl<'a> IncrementalDecoder<'a> {
    pub fn new(store: &'a ParamStore, layers: &'a [DecoderLayerParams], memory: &Tensor, heads: usize) -> Self {
        let dim = memory.cols();
        let cache = layers
            .iter()
            .map(|l| LayerCache {
                self_k: Tensor::zeros(0, dim),
                self_v: Tensor::zeros(0, dim),
                cross_k: affine_t(store, memory, l.cross_attn.wk, l.cross_attn.bk),
                cross_v: affine_t(store, memory, l.cross_attn.wv, l.cross_attn.bv),
            })
            .collect();
        Self {
            store,
            layers,
            heads,
            cache,
        }
    }

    /// Pushes one input row (token plus position embedding) and returns the
    /// top-layer output for it.
    pub fn step(&mut self, x: Tensor) -> Tensor {
        let s = self.store;
        let mut x = x;
        for (l, c) in self.layers.iter().zip(&mut self.cache) {
            let h = ln_t(s, &l.ln1, &x);
            let q = affine_t(s, &h, l.self_attn.wq, l.self_attn.bq);
            let k = affine_t(s, &h, l.self_attn.wk, l.self_attn.bk);
            let v = affine_t(s, &h, l.self_attn.wv, l.self_attn.bv);
            c.self_k = Tensor::concat_rows(&[&c.self_k, &k]);
            c.self_v = Tensor::concat_rows(&[&c.self_v, &v]);
            let a = attend_t(&q, &c.self_k, &c.self_v, self.heads);
            let a = affine_t(s, &a, l.self_attn.wo, l.self_attn.bo);
            x = x.zip_map(&a, |p, q| p + q);

            let h = ln_t(s, &l.ln2, &x);
            let q = affine_t(s, &h, l.cross_attn.wq, l.cross_attn.bq);
            let a = attend_t(&q, &c.cross_k, &c.cross_v, self.heads);
            let a = affine_t(s, &a, l.cross_attn.wo, l.cross_attn.bo);
            x = x.zip_map(&a, |p, q| p + q);

            let h = ln_t(s, &l.ln3, &x);
            let f = affine_t(s, &h, l.ffn.w1, l.ffn.b1).map(tensor::gelu);
            let f = affine_t(s, &f, l.ffn.w2, l.ffn.b2);
            x = x.zip_map(&f, |p, q| p + q);
        }
        x
    }
}

pub fn layer_norm_tensor(store: &ParamStore, p: &LayerNormParams, x: &Tensor) -> Tensor {
    ln_t(store, p, x)
}
