//! News encoder: title text encoder, image-feature encoder and late fusion.
//!
//! A news item becomes a `d`-wide vector as follows:
//!
//! * text: token embedding → self-attention layer(s) → additive attention
//!   pooling → tanh projection to `d`;
//! * image: precomputed feature (or the learned placeholder when the item
//!   has no image) → tanh projection to `d`;
//! * fusion: the two modality vectors are stacked as a 2-row sequence and
//!   pooled with additive attention.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Modality, ModelConfig};
use crate::data::vocab::{split_words, Vocab, OOV_ID};
use crate::error::{Error, Result};
use crate::nn::layers::xavier;
use crate::nn::{
    additive_attention_pool, init_additive, init_mhsa, init_mlp, mlp_forward, multi_head_self_attention,
    Activation, Graph, ParamStore, PoolOutput, Tensor, Var,
};

pub const PREFIX: &str = "news";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsContent {
    pub news_id: String,
    pub category: Option<String>,
    pub title: String,
    pub title_tokens: Vec<usize>,
    pub image_feature: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewsRepr {
    pub news_id: String,
    pub vector: Tensor,
}

/// Lowercased, punctuation-stripped ids, truncated to `max_len`.
/// An empty title yields a single OOV token.
pub fn tokenize_title(raw_title: &str, vocab: &Vocab, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = split_words(raw_title).iter().take(max_len).map(|w| vocab.id(w)).collect();
    if ids.is_empty() {
        ids.push(OOV_ID);
    }
    ids
}

/// Image augmentation slot. Features arrive precomputed, so this is the identity.
pub fn augment_image_feature(feature: &[f64]) -> Vec<f64> {
    feature.to_vec()
}

pub fn init_news_params<R: Rng>(cfg: &ModelConfig, vocab_size: usize, rng: &mut R) -> Result<ParamStore> {
    let mut p = ParamStore::new();
    p.insert(
        format!("{PREFIX}.text.embedding"),
        xavier(rng, vocab_size, cfg.word_dim, &[vocab_size, cfg.word_dim]),
    )?;
    for layer in 0..cfg.text_layers {
        let d_in = if layer == 0 { cfg.word_dim } else { cfg.d };
        init_mhsa(&mut p, &format!("{PREFIX}.text.mhsa{layer}"), d_in, cfg.d, rng)?;
    }
    init_additive(&mut p, &format!("{PREFIX}.text.pool"), cfg.d, cfg.att_hidden, rng)?;
    init_mlp(&mut p, &format!("{PREFIX}.text.proj"), &[cfg.d, cfg.d], rng)?;
    p.insert(format!("{PREFIX}.image.placeholder"), xavier(rng, cfg.d_img, 1, &[cfg.d_img]))?;
    init_mlp(&mut p, &format!("{PREFIX}.image.proj"), &[cfg.d_img, cfg.d], rng)?;
    init_additive(&mut p, &format!("{PREFIX}.fusion"), cfg.d, cfg.att_hidden, rng)?;
    Ok(p)
}

pub fn encode_text(g: &mut Graph, tokens: &[usize], params: &ParamStore, cfg: &ModelConfig) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Contract("encode_text needs at least one token".into()));
    }
    if tokens.len() > cfg.max_title_len {
        return Err(Error::Contract(format!(
            "title of {} tokens exceeds the maximum of {}",
            tokens.len(),
            cfg.max_title_len
        )));
    }
    let table = g.param(params, &format!("{PREFIX}.text.embedding"))?;
    let mut h = g.gather(table, tokens)?;
    for layer in 0..cfg.text_layers {
        h = multi_head_self_attention(g, h, params, &format!("{PREFIX}.text.mhsa{layer}"), cfg.heads)?.output;
    }
    let pooled = additive_attention_pool(g, h, params, &format!("{PREFIX}.text.pool"))?.output;
    mlp_forward(g, pooled, params, &format!("{PREFIX}.text.proj"), Activation::Tanh)
}

/// Projects an image feature (or, when `None`, the learned placeholder) to `d`.
pub fn encode_image(g: &mut Graph, feature: Option<Var>, params: &ParamStore, cfg: &ModelConfig) -> Result<Var> {
    let x = match feature {
        Some(f) => {
            let width = g.value(f).len();
            if width != cfg.d_img {
                return Err(Error::dim(format!("image feature width {width}, expected {}", cfg.d_img)));
            }
            f
        }
        None => g.param(params, &format!("{PREFIX}.image.placeholder"))?,
    };
    mlp_forward(g, x, params, &format!("{PREFIX}.image.proj"), Activation::Tanh)
}

/// Additive-attention pooling over the stacked pair `[text; image]`.
pub fn fuse_modalities(g: &mut Graph, text: Var, image: Var, params: &ParamStore) -> Result<PoolOutput> {
    let (tw, iw) = (g.value(text).len(), g.value(image).len());
    if tw != iw {
        return Err(Error::dim(format!("text width {tw} != image width {iw}")));
    }
    let seq = g.stack_rows(&[text, image])?;
    additive_attention_pool(g, seq, params, &format!("{PREFIX}.fusion"))
}

/// Records the full news encoder for one item on `g`; returns a `[d]` node.
pub fn encode_news(g: &mut Graph, content: &NewsContent, params: &ParamStore, cfg: &ModelConfig) -> Result<Var> {
    let text = match cfg.modality {
        Modality::ImageOnly => None,
        _ => Some(encode_text(g, &content.title_tokens, params, cfg)?),
    };
    let image = match cfg.modality {
        Modality::TextOnly => None,
        _ => {
            let feature = match &content.image_feature {
                Some(f) => Some(g.constant(Tensor::vector(augment_image_feature(f)))?),
                None => None,
            };
            Some(encode_image(g, feature, params, cfg)?)
        }
    };
    match (text, image) {
        (Some(t), Some(i)) => Ok(fuse_modalities(g, t, i, params)?.output),
        (Some(t), None) => Ok(t),
        (None, Some(i)) => Ok(i),
        (None, None) => unreachable!("at least one modality is always enabled"),
    }
}

/// Forward-only encoding of a single item.
pub fn encode_news_value(content: &NewsContent, params: &ParamStore, cfg: &ModelConfig) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = encode_news(&mut g, content, params, cfg)?;
    Ok(g.value(v).clone())
}

/// Encodes many items in parallel; output order follows the input order.
pub fn encode_batch<'a>(
    items: impl IntoParallelIterator<Item = &'a NewsContent>,
    params: &ParamStore,
    cfg: &ModelConfig,
) -> Result<Vec<NewsRepr>> {
    items
        .into_par_iter()
        .map(|c| Ok(NewsRepr { news_id: c.news_id.clone(), vector: encode_news_value(c, params, cfg)? }))
        .collect()
}

/// Encodes a whole catalog keyed by news id.
pub fn encode_catalog(
    catalog: &BTreeMap<String, NewsContent>,
    params: &ParamStore,
    cfg: &ModelConfig,
) -> Result<BTreeMap<String, Tensor>> {
    let items: Vec<&NewsContent> = catalog.values().collect();
    Ok(encode_batch(items, params, cfg)?.into_iter().map(|r| (r.news_id, r.vector)).collect())
}
