//! Local information distinguishing. The fused map is split into n
//! contiguous channel groups of width d_w; each group becomes per-pixel
//! tokens through a shared linear embedding, is enhanced by single-head
//! self-attention with a residual, refined by a residual feed-forward
//! layer, and max-pooled over tokens into one d_w-dimensional local
//! semantic vector. Groups share one weight set by default, so their
//! independence comes purely from the disjoint channel slices.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{he_uniform, scaled_uniform, zeros_param};
use crate::tensor::{PoolMode, PoolWindow, Scalar, Tape, Tensor, TensorId};

#[derive(Clone, Debug)]
pub struct LidWeights {
    embed: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    ffn_w1: Tensor,
    ffn_b1: Tensor,
    ffn_w2: Tensor,
    ffn_b2: Tensor,
}

impl LidWeights {
    fn init(rng: &mut impl Rng, d_w: usize) -> Self {
        // near-identity embedding keeps the grouped features readable by
        // the attention stack from the first step
        let mut embed = scaled_uniform(rng, vec![d_w, d_w], d_w, 0.25);
        for i in 0..d_w {
            embed.data_mut()[i * d_w + i] += 1.0;
        }
        LidWeights {
            embed,
            wq: he_uniform(rng, vec![d_w, d_w], d_w),
            wk: he_uniform(rng, vec![d_w, d_w], d_w),
            wv: he_uniform(rng, vec![d_w, d_w], d_w),
            ffn_w1: he_uniform(rng, vec![d_w, 2 * d_w], d_w),
            ffn_b1: zeros_param(vec![2 * d_w]),
            ffn_w2: he_uniform(rng, vec![2 * d_w, d_w], 2 * d_w),
            ffn_b2: zeros_param(vec![d_w]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LidParams {
    /// One shared set, or one per group when `per_group_weights` is on.
    sets: Vec<LidWeights>,
}

#[derive(Clone, Copy)]
pub struct LidWeightIds {
    pub embed: TensorId,
    pub wq: TensorId,
    pub wk: TensorId,
    pub wv: TensorId,
    pub ffn_w1: TensorId,
    pub ffn_b1: TensorId,
    pub ffn_w2: TensorId,
    pub ffn_b2: TensorId,
}

pub struct LidIds {
    pub sets: Vec<LidWeightIds>,
}

impl LidIds {
    pub fn for_group(&self, m: usize) -> &LidWeightIds {
        &self.sets[m % self.sets.len()]
    }
}

impl LidParams {
    pub fn init(rng: &mut impl Rng, d_w: usize, n_groups: usize, per_group: bool) -> Self {
        let count = if per_group { n_groups } else { 1 };
        LidParams {
            sets: (0..count).map(|_| LidWeights::init(rng, d_w)).collect(),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.sets.iter().enumerate() {
            let p = if self.sets.len() == 1 {
                "lid".to_string()
            } else {
                format!("lid.g{i}")
            };
            out.push((format!("{p}.embed"), &s.embed));
            out.push((format!("{p}.wq"), &s.wq));
            out.push((format!("{p}.wk"), &s.wk));
            out.push((format!("{p}.wv"), &s.wv));
            out.push((format!("{p}.ffn.w1"), &s.ffn_w1));
            out.push((format!("{p}.ffn.b1"), &s.ffn_b1));
            out.push((format!("{p}.ffn.w2"), &s.ffn_w2));
            out.push((format!("{p}.ffn.b2"), &s.ffn_b2));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for s in &mut self.sets {
            out.push(&mut s.embed);
            out.push(&mut s.wq);
            out.push(&mut s.wk);
            out.push(&mut s.wv);
            out.push(&mut s.ffn_w1);
            out.push(&mut s.ffn_b1);
            out.push(&mut s.ffn_w2);
            out.push(&mut s.ffn_b2);
        }
        out
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> LidIds {
        LidIds {
            sets: self
                .sets
                .iter()
                .map(|s| LidWeightIds {
                    embed: tape.leaf_cast(&s.embed),
                    wq: tape.leaf_cast(&s.wq),
                    wk: tape.leaf_cast(&s.wk),
                    wv: tape.leaf_cast(&s.wv),
                    ffn_w1: tape.leaf_cast(&s.ffn_w1),
                    ffn_b1: tape.leaf_cast(&s.ffn_b1),
                    ffn_w2: tape.leaf_cast(&s.ffn_w2),
                    ffn_b2: tape.leaf_cast(&s.ffn_b2),
                })
                .collect(),
        }
    }
}

/// Split an (n·d_w)×H×W map into n contiguous d_w-channel groups.
pub fn split_groups<T: Scalar>(
    tape: &mut Tape<T>,
    fused: TensorId,
    n: usize,
    d_w: usize,
) -> Result<Vec<TensorId>> {
    let c = tape.shape(fused)[0];
    if c != n * d_w {
        return Err(Error::Config(format!(
            "cannot split {c} channels into {n} groups of {d_w}"
        )));
    }
    (0..n)
        .map(|m| tape.slice_channels(fused, m * d_w, (m + 1) * d_w))
        .collect()
}

/// Per-pixel tokens through the shared linear embedding: a d_w×H×W group
/// becomes (H·W)×d_w token rows.
pub fn tokenize<T: Scalar>(tape: &mut Tape<T>, group: TensorId, embed: TensorId) -> Result<TensorId> {
    let tokens = tape.tokens_from_map(group)?;
    tape.matmul(tokens, embed)
}

/// Single-head self-attention with residual. The correlation matrix is
/// softmax_rows(K·Qᵀ / sqrt(d_w)); the scale factor is optional to expose
/// the raw unscaled product.
pub fn attention_enhance<T: Scalar>(
    tape: &mut Tape<T>,
    t: TensorId,
    w: &LidWeightIds,
    scaled: bool,
) -> Result<TensorId> {
    let d_w = tape.shape(t)[1];
    let q = tape.matmul(t, w.wq)?;
    let k = tape.matmul(t, w.wk)?;
    let v = tape.matmul(t, w.wv)?;
    let mut logits = tape.matmul_nt(k, q)?;
    if scaled {
        logits = tape.mul_scalar(logits, 1.0 / (d_w as f64).sqrt());
    }
    let attn = tape.softmax_rows(logits)?;
    let mixed = tape.matmul(attn, v)?;
    tape.add(t, mixed)
}

/// Residual feed-forward refinement with hidden width 2·d_w.
pub fn feed_forward_refine<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorId,
    w: &LidWeightIds,
    slope: f64,
) -> Result<TensorId> {
    let h = tape.matmul(x, w.ffn_w1)?;
    let h = tape.add_row_bias(h, w.ffn_b1)?;
    let h = tape.leaky_relu(h, slope)?;
    let o = tape.matmul(h, w.ffn_w2)?;
    let o = tape.add_row_bias(o, w.ffn_b2)?;
    tape.add(x, o)
}

/// Full local path: tokenize, attention, feed-forward, then per-dimension
/// max over tokens, stacked into an n×d_w matrix of local semantics.
pub fn local_semantics<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &LidIds,
    groups: &[TensorId],
    scaled: bool,
    slope: f64,
) -> Result<TensorId> {
    let mut pooled = Vec::with_capacity(groups.len());
    for (m, &g) in groups.iter().enumerate() {
        let w = ids.for_group(m);
        let tokens = tokenize(tape, g, w.embed)?;
        let enhanced = attention_enhance(tape, tokens, w, scaled)?;
        let refined = feed_forward_refine(tape, enhanced, w, slope)?;
        pooled.push(tape.max_over_rows(refined)?);
    }
    tape.stack_rows(&pooled)
}

/// LID bypass: plain per-group spatial max-pool, no attention machinery.
pub fn pool_groups_only<T: Scalar>(tape: &mut Tape<T>, groups: &[TensorId]) -> Result<TensorId> {
    let mut pooled = Vec::with_capacity(groups.len());
    for &g in groups {
        pooled.push(tape.spatial_pool(g, PoolMode::Max, PoolWindow::Global)?);
    }
    tape.stack_rows(&pooled)
}
