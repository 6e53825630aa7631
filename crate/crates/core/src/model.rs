//! The full recommender: news encoder parameters (server side), user encoder
//! parameters (shipped to clients), the shared per-user loss, and central
//! evaluation.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::news::{encode_catalog, init_news_params, NewsContent};
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::ranking::{
    click_score, evaluate_ranking, sample_loss_graph, Impression, ImpressionMetrics, MetricsReport, TrainingSample,
};
use crate::user::{encode_user, encode_user_graph, init_user_params, ClickHistory};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub news: ParamStore,
    pub user: ParamStore,
}

impl Model {
    pub fn init(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let news = init_news_params(config, vocab_size, &mut rng)?;
        let user = init_user_params(config, &mut rng)?;
        Ok(Self { config: config.clone(), news, user })
    }

    pub fn encode_catalog(&self, catalog: &BTreeMap<String, NewsContent>) -> Result<BTreeMap<String, Tensor>> {
        encode_catalog(catalog, &self.news, &self.config)
    }

    /// Scores every impression of `users` present in `impressions` against
    /// freshly encoded news. Cold-start users get a zero vector, so all their
    /// candidates tie.
    pub fn evaluate(
        &self,
        catalog: &BTreeMap<String, NewsContent>,
        users: &BTreeMap<String, ClickHistory>,
        impressions: &[Impression],
    ) -> Result<MetricsReport> {
        let reprs = self.encode_catalog(catalog)?;
        evaluate_with(&reprs, &self.user, &self.config, users, impressions)
    }
}

/// User vector with the cold-start fallback.
pub fn user_vector(
    history: Option<&ClickHistory>,
    reprs: &BTreeMap<String, Tensor>,
    user_params: &ParamStore,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    match history {
        Some(h) if !h.clicked.is_empty() => Ok(encode_user(h, reprs, user_params, cfg)?.combined),
        _ => Ok(Tensor::zeros(&[cfg.d])),
    }
}

pub fn evaluate_with(
    reprs: &BTreeMap<String, Tensor>,
    user_params: &ParamStore,
    cfg: &ModelConfig,
    users: &BTreeMap<String, ClickHistory>,
    impressions: &[Impression],
) -> Result<MetricsReport> {
    let mut ids: Vec<&String> = impressions.iter().map(|i| &i.user_id).collect();
    ids.sort();
    ids.dedup();
    let vectors: HashMap<&String, Tensor> = ids
        .par_iter()
        .map(|&id| Ok((id, user_vector(users.get(id), reprs, user_params, cfg)?)))
        .collect::<Result<_>>()?;
    let per: Vec<ImpressionMetrics> = impressions
        .par_iter()
        .map(|imp| {
            let u = &vectors[&imp.user_id];
            let scores = imp
                .candidates
                .iter()
                .map(|(id, _)| {
                    let n = reprs.get(id).ok_or_else(|| Error::MissingRepr(id.clone()))?;
                    click_score(u, n)
                })
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<bool> = imp.candidates.iter().map(|c| c.1).collect();
            evaluate_ranking(&scores, &labels)
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport::from_impressions(&per))
}

/// Every news id a user's loss touches: the capped history, then sample
/// candidates, in first-seen order.
pub fn touched_news<'a>(history: &'a [String], samples: &'a [TrainingSample]) -> Vec<&'a String> {
    let mut seen = std::collections::HashSet::new();
    history
        .iter()
        .chain(samples.iter().flat_map(|s| s.candidates()))
        .filter(|id| seen.insert(id.as_str()))
        .collect()
}

/// Records `Σ_s L_s` over one user's samples on `g`, reading news
/// representations from `news`.
pub fn user_loss_sum(
    g: &mut Graph,
    user_params: &ParamStore,
    cfg: &ModelConfig,
    history: &[String],
    samples: &[TrainingSample],
    news: &HashMap<String, Var>,
) -> Result<Var> {
    if history.is_empty() {
        return Err(Error::ColdStart(samples.first().map(|s| s.user_id.clone()).unwrap_or_default()));
    }
    if samples.is_empty() {
        return Err(Error::Contract("user loss needs at least one sample".into()));
    }
    let lookup = |id: &String| news.get(id).copied().ok_or_else(|| Error::MissingRepr(id.clone()));
    let rows = history.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    let h = g.stack_rows(&rows)?;
    let u = encode_user_graph(g, h, user_params, cfg)?.combined;
    let losses = samples
        .iter()
        .map(|s| {
            let cands = s.candidates().map(lookup).collect::<Result<Vec<_>>>()?;
            sample_loss_graph(g, u, &cands)
        })
        .collect::<Result<Vec<_>>>()?;
    let stacked = g.stack_rows(&losses)?;
    g.sum(stacked)
}
