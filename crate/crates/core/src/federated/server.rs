use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::client::{ClientState, ClientUpdate, RoundPayload};
use super::ServerBound;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::news::{encode_batch, encode_news, NewsContent};
use crate::nn::{nadam_step, GradStore, Graph, NadamConfig, OptimizerState, ParamStore, Tensor};
use crate::secure_agg::{
    decode_fixed_point, pool_from_sum, reconstruct_ring, secure_share_sums, ChannelTrace, PairwiseStreams,
    SecureSumStats,
};

/// Pooled items encoded per graph when back-propagating into the news model.
const NEWS_CHUNK: usize = 16;

#[derive(Debug, Clone)]
pub struct ServerState {
    pub model: Model,
    /// Representations as last refreshed; pooled items are always current
    /// after a round, the rest at each full refresh.
    pub news_reprs: BTreeMap<String, Tensor>,
    pub news_opt: OptimizerState,
    pub user_opt: OptimizerState,
    pub round: u64,
    pub catalog: BTreeMap<String, NewsContent>,
}

impl ServerState {
    pub fn new(model: Model, catalog: BTreeMap<String, NewsContent>, nadam: NadamConfig) -> Result<Self> {
        let news_reprs = model.encode_catalog(&catalog)?;
        let news_opt = OptimizerState::new(nadam, &model.news);
        let user_opt = OptimizerState::new(nadam, &model.user);
        Ok(Self { model, news_reprs, news_opt, user_opt, round: 0, catalog })
    }

    /// Catalog ids in membership-vector order.
    pub fn news_ids(&self) -> Vec<String> {
        self.catalog.keys().cloned().collect()
    }

    pub fn catalog_repr_bytes(&self) -> usize {
        self.catalog.len() * self.model.config.d * 8
    }

    /// The user model and the representations of pooled news only.
    pub fn distribute_round_payload(&self, pool: &[String]) -> Result<RoundPayload> {
        let reprs = pool
            .iter()
            .map(|id| {
                self.news_reprs
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::Consistency(format!("pooled news {id} has no representation")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RoundPayload { user_params: self.model.user.clone(), pool: pool.to_vec(), reprs })
    }

    /// Applies one NAdam step; an all-zero aggregate is not applied.
    pub fn update_user_model(&mut self, g_user: &GradStore) -> Result<bool> {
        if g_user.global_norm() == 0.0 {
            return Ok(false);
        }
        nadam_step(&mut self.model.user, g_user, &mut self.user_opt)?;
        Ok(true)
    }

    /// `∂/∂W_n Σ_i ⟨n_i(W_n), ḡ_i⟩` over the pooled items.
    pub fn news_model_gradient(&self, pool: &[String], g_news: &[Tensor]) -> Result<GradStore> {
        if pool.len() != g_news.len() {
            return Err(Error::dim(format!("{} pooled ids but {} gradient blocks", pool.len(), g_news.len())));
        }
        let mut items = Vec::new();
        for (id, gi) in pool.iter().zip(g_news) {
            let content = self
                .catalog
                .get(id)
                .ok_or_else(|| Error::Consistency(format!("pooled news {id} missing from the catalog")))?;
            if gi.sq_norm() > 0.0 {
                items.push((content, gi));
            }
        }
        let cfg = &self.model.config;
        let params = &self.model.news;
        let parts = items
            .par_chunks(NEWS_CHUNK)
            .map(|chunk| {
                let mut g = Graph::new();
                let mut terms = Vec::with_capacity(chunk.len());
                for (content, gi) in chunk {
                    let n = encode_news(&mut g, content, params, cfg)?;
                    let c = g.constant((*gi).clone())?;
                    let prod = g.mul(n, c)?;
                    terms.push(g.sum(prod)?);
                }
                let stacked = g.stack_rows(&terms)?;
                let total = g.sum(stacked)?;
                g.backward_params(total, params)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut acc = GradStore::zeros_like(params);
        for p in &parts {
            acc.add_scaled(p, 1.0)?;
        }
        Ok(acc)
    }

    /// Back-propagates `ḡ_news` into the news model, steps it, then
    /// re-encodes the pool (or the whole catalog when `full_refresh`).
    /// Returns `false` and changes nothing when every block is zero.
    pub fn update_news_model(&mut self, pool: &[String], g_news: &[Tensor], full_refresh: bool) -> Result<bool> {
        if g_news.iter().all(|t| t.sq_norm() == 0.0) {
            if pool.iter().any(|id| !self.catalog.contains_key(id)) {
                return Err(Error::Consistency("pooled news missing from the catalog".into()));
            }
            return Ok(false);
        }
        let grads = self.news_model_gradient(pool, g_news)?;
        nadam_step(&mut self.model.news, &grads, &mut self.news_opt)?;
        if full_refresh {
            self.news_reprs = self.model.encode_catalog(&self.catalog)?;
        } else {
            self.refresh(pool)?;
        }
        Ok(true)
    }

    pub fn refresh(&mut self, ids: &[String]) -> Result<()> {
        let items = ids
            .iter()
            .map(|id| {
                self.catalog.get(id).ok_or_else(|| Error::Consistency(format!("news {id} missing from the catalog")))
            })
            .collect::<Result<Vec<_>>>()?;
        for r in encode_batch(items, &self.model.news, &self.model.config)? {
            self.news_reprs.insert(r.news_id, r.vector);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PoolResult {
    /// Catalog indices, ascending.
    pub pool: Vec<usize>,
    pub server_view: Vec<ServerBound>,
    pub stats: SecureSumStats,
}

/// Secure sum (`f = 0`) of the members' membership vectors. The server
/// reconstructs the per-news counts and keeps the positive ones.
pub fn compute_news_pool(
    members: &[&ClientState],
    index: &HashMap<String, usize>,
    streams: PairwiseStreams,
    round: u64,
    dropped: &[bool],
    trace: Option<&mut ChannelTrace>,
) -> Result<PoolResult> {
    let secrets = members
        .iter()
        .enumerate()
        .map(|(i, c)| c.membership(i, index))
        .collect::<Result<Vec<_>>>()?;
    let (sums, stats) = secure_share_sums(&secrets, dropped, streams, round, trace)?;
    let counts = reconstruct_ring(&sums, members.len())?.to_signed();
    let pool = pool_from_sum(&counts)?;
    Ok(PoolResult { pool, server_view: sums.into_iter().map(ServerBound::PoolShareSum).collect(), stats })
}

#[derive(Debug, Clone)]
pub struct Aggregate {
    pub g_user: GradStore,
    pub g_news: Vec<Tensor>,
    pub total_weight: f64,
    pub server_view: Vec<ServerBound>,
    pub stats: SecureSumStats,
}

/// Secure sum (`f = frac_bits`) of each member's `g_user ‖ g_news ‖ [|B_u|]`,
/// decoded and divided by the summed weight. `updates` must be in
/// participant order. Returns `None` when the summed weight is zero.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_gradients(
    updates: &[ClientUpdate],
    user_template: &ParamStore,
    repr_width: usize,
    frac_bits: u32,
    streams: PairwiseStreams,
    round: u64,
    dropped: &[bool],
    trace: Option<&mut ChannelTrace>,
) -> Result<Option<Aggregate>> {
    let pool_len = updates.first().map_or(0, |u| u.g_news.len());
    let width = user_template.numel() + pool_len * repr_width + 1;
    let secrets: Vec<_> = updates.iter().enumerate().map(|(i, u)| u.to_secret(i, frac_bits)).collect();
    if let Some(s) = secrets.iter().find(|s| s.values.len() != width) {
        return Err(Error::Protocol(format!("participant {} sent {} values, expected {width}", s.owner, s.values.len())));
    }
    let (sums, stats) = secure_share_sums(&secrets, dropped, streams, round, trace)?;
    let ring = reconstruct_ring(&sums, updates.len())?;
    let decoded: Vec<f64> = ring.0.iter().map(|&r| decode_fixed_point(r, frac_bits)).collect();
    let total_weight = decoded[width - 1];
    if total_weight <= 0.0 {
        return Ok(None);
    }
    let mean: Vec<f64> = decoded[..width - 1].iter().map(|x| x / total_weight).collect();
    let n_user = user_template.numel();
    let g_user = user_template.unflatten_like(&mean[..n_user])?;
    let g_news = mean[n_user..]
        .chunks(repr_width.max(1))
        .map(|c| Tensor::vector(c.to_vec()))
        .collect();
    Ok(Some(Aggregate {
        g_user,
        g_news,
        total_weight,
        server_view: sums.into_iter().map(ServerBound::GradientShareSum).collect(),
        stats,
    }))
}
