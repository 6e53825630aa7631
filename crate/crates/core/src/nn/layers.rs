//! Layer forward passes built on [`Graph`], plus their parameter initializers.
//!
//! Layers are stateless: a layer is a path prefix into a [`ParamStore`].
//! Weights are stored `[in, out]` and applied as `x · W + b`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    #[default]
    Tanh,
    Relu,
}

fn apply(g: &mut Graph, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Identity => Ok(x),
        Activation::Tanh => g.tanh(x),
        Activation::Relu => g.relu(x),
    }
}

pub(crate) fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

pub fn init_linear<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Result<()> {
    store.insert(format!("{prefix}.w"), xavier(rng, d_in, d_out, &[d_in, d_out]))?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[d_out]))
}

/// MLP with layers `prefix.0`, `prefix.1`, … of the given widths.
pub fn init_mlp<R: Rng>(store: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut R) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Parameter("an MLP needs at least input and output widths".into()));
    }
    for (i, pair) in widths.windows(2).enumerate() {
        init_linear(store, &format!("{prefix}.{i}"), pair[0], pair[1], rng)?;
    }
    Ok(())
}

/// `act(x · W + b)` for every layer found under `prefix`.
pub fn mlp_forward(g: &mut Graph, x: Var, params: &ParamStore, prefix: &str, act: Activation) -> Result<Var> {
    let mut h = x;
    let mut layer = 0;
    while params.contains(&format!("{prefix}.{layer}.w")) {
        let w = g.param(params, &format!("{prefix}.{layer}.w"))?;
        let b = g.param(params, &format!("{prefix}.{layer}.b"))?;
        let (_, d_in) = g.value(h).dims2()?;
        let (w_in, _) = g.value(w).dims2()?;
        if d_in != w_in {
            return Err(Error::dim(format!(
                "{prefix}.{layer}: input width {d_in}, layer expects {w_in}"
            )));
        }
        let was_vector = g.value(h).shape().len() == 1;
        let z = g.matmul(h, w)?;
        let z = g.add_row(z, b)?;
        h = apply(g, z, act)?;
        if was_vector {
            let width = g.value(h).len();
            h = g.reshape(h, vec![width])?;
        }
        layer += 1;
    }
    if layer == 0 {
        return Err(Error::Contract(format!("no MLP layers under {prefix}")));
    }
    Ok(h)
}

/// Query/key/value projections `[d_in, d_out]` and an output projection
/// `[d_out, d_out]` with bias, where `d_out = heads · head_dim`.
pub fn init_mhsa<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Result<()> {
    for name in ["wq", "wk", "wv"] {
        store.insert(format!("{prefix}.{name}"), xavier(rng, d_in, d_out, &[d_in, d_out]))?;
    }
    store.insert(format!("{prefix}.wo"), xavier(rng, d_out, d_out, &[d_out, d_out]))?;
    store.insert(format!("{prefix}.bo"), Tensor::zeros(&[d_out]))
}

pub struct AttentionOutput {
    pub output: Var,
    /// One `L × L` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

/// Scaled dot-product self-attention per head, heads concatenated, then
/// output-projected.
pub fn multi_head_self_attention(
    g: &mut Graph,
    seq: Var,
    params: &ParamStore,
    prefix: &str,
    heads: usize,
) -> Result<AttentionOutput> {
    let (len, _) = g.value(seq).dims2()?;
    if len == 0 || g.value(seq).is_empty() {
        return Err(Error::EmptySequence("multi_head_self_attention"));
    }
    let wq = g.param(params, &format!("{prefix}.wq"))?;
    let wk = g.param(params, &format!("{prefix}.wk"))?;
    let wv = g.param(params, &format!("{prefix}.wv"))?;
    let wo = g.param(params, &format!("{prefix}.wo"))?;
    let bo = g.param(params, &format!("{prefix}.bo"))?;
    let (_, d_out) = g.value(wq).dims2()?;
    if heads == 0 || d_out % heads != 0 {
        return Err(Error::dim(format!("{heads} heads do not divide width {d_out}")));
    }
    let head_dim = d_out / heads;
    let q = g.matmul(seq, wq)?;
    let k = g.matmul(seq, wk)?;
    let v = g.matmul(seq, wv)?;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax_rows(scores)?;
        outs.push(g.matmul(attn, vh)?);
        weights.push(attn);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let proj = g.matmul(cat, wo)?;
    let output = g.add_row(proj, bo)?;
    Ok(AttentionOutput { output, weights })
}

pub fn init_additive<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, hidden: usize, rng: &mut R) -> Result<()> {
    store.insert(format!("{prefix}.w"), xavier(rng, d, hidden, &[d, hidden]))?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[hidden]))?;
    store.insert(format!("{prefix}.q"), xavier(rng, hidden, 1, &[hidden]))
}

pub struct PoolOutput {
    /// Pooled vector, shape `[d]`.
    pub output: Var,
    /// Attention weights, shape `[1, L]`.
    pub weights: Var,
}

/// `α_i = softmax_i(qᵀ tanh(W x_i + b))`, output `Σ_i α_i x_i`.
pub fn additive_attention_pool(g: &mut Graph, seq: Var, params: &ParamStore, prefix: &str) -> Result<PoolOutput> {
    let (len, d) = g.value(seq).dims2()?;
    if len == 0 || g.value(seq).is_empty() {
        return Err(Error::EmptySequence("additive_attention_pool"));
    }
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    let q = g.param(params, &format!("{prefix}.q"))?;
    let hidden = g.value(q).len();
    let proj = g.matmul(seq, w)?;
    let proj = g.add_row(proj, b)?;
    let act = g.tanh(proj)?;
    let q_col = g.reshape(q, vec![hidden, 1])?;
    let scores = g.matmul(act, q_col)?;
    let scores = g.reshape(scores, vec![1, len])?;
    let weights = g.softmax_rows(scores)?;
    let pooled = g.matmul(weights, seq)?;
    let output = g.reshape(pooled, vec![d])?;
    Ok(PoolOutput { output, weights })
}
