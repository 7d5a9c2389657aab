//! Building blocks of the forward pass, expressed on a [`Graph`], plus
//! value-level wrappers for inspection and testing.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::AttentionMode;
use super::params::{AttentionWeights, FeedForward, GatedAttention, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, Var};

/// Dropout settings for one FFN application; `None` in evaluation.
pub(crate) type Dropout<'r> = Option<(&'r mut ChaCha8Rng, f64)>;

pub(crate) fn linear(g: &mut Graph, x: Var, p: &Linear<Var>) -> Result<Var> {
    let xw = g.matmul(x, p.weight)?;
    g.add_row(xw, p.bias)
}

pub(crate) fn feed_forward(g: &mut Graph, x: Var, p: &FeedForward<Var>, dropout: Dropout<'_>) -> Result<Var> {
    let h = linear(g, x, &p.hidden)?;
    let mut h = g.relu(h);
    if let Some((rng, rate)) = dropout {
        if rate > 0.0 {
            let (r, c) = g.value(h).shape();
            let keep = 1.0 / (1.0 - rate);
            let mask = Matrix::from_fn(r, c, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep });
            h = g.mask(h, mask)?;
        }
    }
    linear(g, h, &p.output)
}

pub(crate) fn layer_norm(g: &mut Graph, x: Var, p: &LayerNorm<Var>) -> Result<Var> {
    let n = g.layer_norm_rows(x);
    let scaled = g.mul_row(n, p.gain)?;
    g.add_row(scaled, p.bias)
}

/// Output of a multi-head attention layer together with the per-head
/// attention matrices (queries x keys), when they are formed explicitly.
pub(crate) struct Attended {
    pub output: Var,
    pub probs: Vec<Var>,
}

fn check_heads(g: &Graph, x: Var, heads: usize) -> Result<usize> {
    let l = g.value(x).cols();
    if heads == 0 || !l.is_multiple_of(heads) {
        return Err(Error::Config(alloc::format!("width {l} not divisible by {heads} heads")));
    }
    Ok(l / heads)
}

/// Softmax attention of `queries` over `keys_values`:
/// `concat_h(softmax(Q_h K_hᵀ / √d_k) V_h) · W^O`.
pub(crate) fn attention(
    g: &mut Graph,
    queries: Var,
    keys_values: Var,
    p: &AttentionWeights<Var>,
    heads: usize,
) -> Result<Attended> {
    let dk = check_heads(g, queries, heads)?;
    let q = g.matmul(queries, p.query)?;
    let k = g.matmul(keys_values, p.key)?;
    let v = g.matmul(keys_values, p.value)?;
    let scale = 1.0 / libm::sqrt(dk as f64);
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = slice_head(g, q, h, dk, heads)?;
        let kh = slice_head(g, k, h, dk, heads)?;
        let vh = slice_head(g, v, h, dk, heads)?;
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let a = g.softmax_rows(scores);
        outs.push(g.matmul(a, vh)?);
        probs.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let output = g.matmul(cat, p.output)?;
    Ok(Attended { output, probs })
}

fn slice_head(g: &mut Graph, x: Var, h: usize, dk: usize, heads: usize) -> Result<Var> {
    if heads == 1 {
        Ok(x)
    } else {
        g.slice_cols(x, h * dk, dk)
    }
}

/// Averaging matrix (m x n) whose row `j` is the mean over the contiguous
/// segment `⌊j·n/m⌋ .. ⌊(j+1)·n/m⌋`.
pub fn segment_means(n: usize, m: usize) -> Matrix {
    let mut out = Matrix::zeros(m, n);
    for j in 0..m {
        let start = j * n / m;
        let end = (j + 1) * n / m;
        let w = 1.0 / (end - start) as f64;
        for i in start..end {
            out.set(j, i, w);
        }
    }
    out
}

/// Nyström approximation of multi-head self-attention with `landmarks`
/// segment-mean landmarks: `softmax(Q K̃ᵀ) · pinv(softmax(Q̃ K̃ᵀ)) · softmax(Q̃ Kᵀ) · V` per head.
pub(crate) fn nystrom_attention(
    g: &mut Graph,
    x: Var,
    p: &AttentionWeights<Var>,
    heads: usize,
    landmarks: usize,
) -> Result<Var> {
    let n = g.value(x).rows();
    if landmarks == 0 || landmarks > n {
        return Err(Error::Config(alloc::format!("{landmarks} landmarks for {n} instances")));
    }
    let dk = check_heads(g, x, heads)?;
    let q = g.matmul(x, p.query)?;
    let k = g.matmul(x, p.key)?;
    let v = g.matmul(x, p.value)?;
    let means = g.constant(segment_means(n, landmarks));
    let scale = 1.0 / libm::sqrt(dk as f64);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = slice_head(g, q, h, dk, heads)?;
        let kh = slice_head(g, k, h, dk, heads)?;
        let vh = slice_head(g, v, h, dk, heads)?;
        let q_land = g.matmul(means, qh)?;
        let k_land = g.matmul(means, kh)?;
        let k1 = scaled_softmax(g, qh, k_land, scale)?;
        let k2 = scaled_softmax(g, q_land, k_land, scale)?;
        let k3 = scaled_softmax(g, q_land, kh, scale)?;
        let k2_inv = g.pinv(k2);
        let k3v = g.matmul(k3, vh)?;
        let mid = g.matmul(k2_inv, k3v)?;
        outs.push(g.matmul(k1, mid)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    g.matmul(cat, p.output)
}

fn scaled_softmax(g: &mut Graph, a: Var, b: Var, scale: f64) -> Result<Var> {
    let s = g.matmul_nt(a, b)?;
    let s = g.scale(s, scale);
    Ok(g.softmax_rows(s))
}

pub(crate) fn self_attention_graph(
    g: &mut Graph,
    x: Var,
    p: &AttentionWeights<Var>,
    heads: usize,
    mode: AttentionMode,
) -> Result<Var> {
    match mode {
        AttentionMode::Exact => Ok(attention(g, x, x, p, heads)?.output),
        AttentionMode::Nystrom { landmarks } => nystrom_attention(g, x, p, heads, landmarks),
    }
}

/// Gated attention weights `softmax_i(wᵀ(tanh(V x̃ᵢ) ⊙ sigm(U x̃ᵢ)))` as a 1 x n row,
/// and the pooled 1 x L bag vector.
pub(crate) fn gated_pool(g: &mut Graph, x: Var, p: &GatedAttention<Var>) -> Result<(Var, Var)> {
    let hv = g.matmul(x, p.v)?;
    let hv = g.tanh(hv);
    let hu = g.matmul(x, p.u)?;
    let hu = g.sigmoid(hu);
    let gated = g.mul(hv, hu)?;
    let logits = g.matmul(gated, p.w)?;
    let logits = g.transpose(logits);
    let weights = g.softmax_rows(logits);
    let pooled = g.matmul(weights, x)?;
    Ok((pooled, weights))
}

/// Eval-mode instance embedding through an FFN.
pub fn ffn_embed(features: &Matrix, p: &FeedForward<Matrix>) -> Result<Matrix> {
    let mut g = Graph::new();
    let bound = p.map(&mut |m| g.constant(m.clone()));
    let x = g.constant(features.clone());
    let out = feed_forward(&mut g, x, &bound, None)?;
    Ok(g.value(out).clone())
}

/// Gated attention pooling of an n x L embedding matrix: `(bag_vector, weights)`.
pub fn abmil_pool(embeddings: &Matrix, p: &GatedAttention<Matrix>) -> Result<(Vec<f64>, Vec<f64>)> {
    if embeddings.rows() == 0 {
        return Err(Error::Data("empty bag".into()));
    }
    let mut g = Graph::new();
    let bound = p.map(&mut |m| g.constant(m.clone()));
    let x = g.constant(embeddings.clone());
    let (pooled, weights) = gated_pool(&mut g, x, &bound)?;
    Ok((g.value(pooled).as_slice().to_vec(), g.value(weights).as_slice().to_vec()))
}

/// Multi-head self-attention over the rows of `x` (no residual).
pub fn self_attention(x: &Matrix, p: &AttentionWeights<Matrix>, heads: usize, mode: AttentionMode) -> Result<Matrix> {
    let mut g = Graph::new();
    let bound = p.map(&mut |m| g.constant(m.clone()));
    let xv = g.constant(x.clone());
    let out = self_attention_graph(&mut g, xv, &bound, heads, mode)?;
    Ok(g.value(out).clone())
}

/// Result of [`mhca`]: the (K+1) x L output and one (K+1) x n attention matrix per head.
#[derive(Debug, Clone)]
pub struct CrossAttentionOutput {
    pub output: Matrix,
    pub probs: Vec<Matrix>,
}

/// Multi-head cross-attention with global vectors as queries and instances as keys/values.
pub fn mhca(
    globals: &Matrix,
    instances: &Matrix,
    p: &AttentionWeights<Matrix>,
    heads: usize,
) -> Result<CrossAttentionOutput> {
    let mut g = Graph::new();
    let bound = p.map(&mut |m| g.constant(m.clone()));
    let gv = g.constant(globals.clone());
    let xv = g.constant(instances.clone());
    let att = attention(&mut g, gv, xv, &bound, heads)?;
    Ok(CrossAttentionOutput {
        output: g.value(att.output).clone(),
        probs: att.probs.iter().map(|&a| g.value(a).clone()).collect(),
    })
}

/// Importance of every instance for the token query under head `head`:
/// `softmax_i((t W^Q_h)(x̃ᵢ W^K_h)ᵀ / √d_k)`.
pub fn token_attention(
    token: &[f64],
    instances: &Matrix,
    p: &AttentionWeights<Matrix>,
    heads: usize,
    head: usize,
) -> Result<Vec<f64>> {
    if head >= heads {
        return Err(Error::Config(alloc::format!("head {head} out of range for {heads} heads")));
    }
    let mut g = Graph::new();
    let t = g.constant(Matrix::row_vector(token));
    let x = g.constant(instances.clone());
    let wq = g.constant(p.query.clone());
    let wk = g.constant(p.key.clone());
    let dk = check_heads(&g, t, heads)?;
    let q = g.matmul(t, wq)?;
    let k = g.matmul(x, wk)?;
    let qh = slice_head(&mut g, q, head, dk, heads)?;
    let kh = slice_head(&mut g, k, head, dk, heads)?;
    let a = scaled_softmax(&mut g, qh, kh, 1.0 / libm::sqrt(dk as f64))?;
    Ok(g.value(a).as_slice().to_vec())
}
