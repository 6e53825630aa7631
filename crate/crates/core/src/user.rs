//! User encoder: long-term and short-term interest branches combined by
//! additive attention.
//!
//! Both branches run self-attention followed by additive pooling over
//! clicked-news representations, with separate parameters. Only the
//! short-term branch adds learned positional embeddings; they are aligned to
//! the end of the window so the most recent click always gets the last slot.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, UserMode};
use crate::error::{Error, Result};
use crate::nn::layers::xavier;
use crate::nn::{
    additive_attention_pool, init_additive, init_mhsa, multi_head_self_attention, Graph, ParamStore, PoolOutput,
    Tensor, Var,
};

pub const PREFIX: &str = "user";

/// Clicked news ids, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickHistory {
    pub user_id: String,
    pub clicked: Vec<String>,
}

impl ClickHistory {
    /// The `cap` most recent clicks.
    pub fn recent(&self, cap: usize) -> &[String] {
        let start = self.clicked.len().saturating_sub(cap);
        &self.clicked[start..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRepr {
    pub user_id: String,
    pub long_vec: Tensor,
    pub short_vec: Tensor,
    pub combined: Tensor,
}

pub fn init_user_params<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore> {
    let mut p = ParamStore::new();
    init_mhsa(&mut p, &format!("{PREFIX}.long.mhsa"), cfg.d, cfg.d, rng)?;
    init_additive(&mut p, &format!("{PREFIX}.long.pool"), cfg.d, cfg.att_hidden, rng)?;
    p.insert(
        format!("{PREFIX}.short.pos"),
        xavier(rng, cfg.short_window, cfg.d, &[cfg.short_window, cfg.d]).map(|x| 0.1 * x),
    )?;
    init_mhsa(&mut p, &format!("{PREFIX}.short.mhsa"), cfg.d, cfg.d, rng)?;
    init_additive(&mut p, &format!("{PREFIX}.short.pool"), cfg.d, cfg.att_hidden, rng)?;
    init_additive(&mut p, &format!("{PREFIX}.combine"), cfg.d, cfg.att_hidden, rng)?;
    Ok(p)
}

fn rows(g: &Graph, v: Var) -> Result<usize> {
    let (n, _) = g.value(v).dims2()?;
    if n == 0 || g.value(v).is_empty() {
        return Err(Error::EmptySequence("user history"));
    }
    Ok(n)
}

/// `[N × d]` clicked-news matrix → `u_L`.
pub fn encode_long_term(g: &mut Graph, history: Var, params: &ParamStore, cfg: &ModelConfig) -> Result<Var> {
    let n = rows(g, history)?;
    if n > cfg.n_long {
        return Err(Error::Contract(format!("history of {n} exceeds n_long = {}", cfg.n_long)));
    }
    let h = multi_head_self_attention(g, history, params, &format!("{PREFIX}.long.mhsa"), cfg.heads)?.output;
    Ok(additive_attention_pool(g, h, params, &format!("{PREFIX}.long.pool"))?.output)
}

/// Last `min(short_window, N)` rows plus positional embeddings → `u_S`.
pub fn encode_short_term(g: &mut Graph, history: Var, params: &ParamStore, cfg: &ModelConfig) -> Result<Var> {
    let n = rows(g, history)?;
    let m = cfg.short_window;
    if m == 0 {
        return Err(Error::Parameter("short window must be at least 1".into()));
    }
    let len = n.min(m);
    let recent = if len == n { history } else { g.slice_rows(history, n - len, n)? };
    let pos_table = g.param(params, &format!("{PREFIX}.short.pos"))?;
    let pos = if len == m { pos_table } else { g.slice_rows(pos_table, m - len, m)? };
    let x = g.add(recent, pos)?;
    let h = multi_head_self_attention(g, x, params, &format!("{PREFIX}.short.mhsa"), cfg.heads)?.output;
    Ok(additive_attention_pool(g, h, params, &format!("{PREFIX}.short.pool"))?.output)
}

pub fn combine_interests(g: &mut Graph, long: Var, short: Var, params: &ParamStore) -> Result<PoolOutput> {
    let (lw, sw) = (g.value(long).len(), g.value(short).len());
    if lw != sw {
        return Err(Error::dim(format!("u_L width {lw} != u_S width {sw}")));
    }
    let seq = g.stack_rows(&[long, short])?;
    additive_attention_pool(g, seq, params, &format!("{PREFIX}.combine"))
}

#[derive(Debug, Clone, Copy)]
pub struct UserVars {
    pub long: Var,
    pub short: Var,
    pub combined: Var,
}

/// Runs both branches and their combination on a `[N × d]` history node.
/// `N` must already be capped at `n_long`.
pub fn encode_user_graph(g: &mut Graph, history: Var, params: &ParamStore, cfg: &ModelConfig) -> Result<UserVars> {
    let long = encode_long_term(g, history, params, cfg)?;
    let short = encode_short_term(g, history, params, cfg)?;
    let combined = match cfg.user_mode {
        UserMode::LongShort => combine_interests(g, long, short, params)?.output,
        UserMode::LongOnly => long,
        UserMode::ShortOnly => short,
    };
    Ok(UserVars { long, short, combined })
}

/// Stacks the representations of the `n_long` most recent clicks.
pub fn history_matrix(history: &ClickHistory, reprs: &BTreeMap<String, Tensor>, cfg: &ModelConfig) -> Result<Tensor> {
    let recent = history.recent(cfg.n_long);
    if recent.is_empty() {
        return Err(Error::ColdStart(history.user_id.clone()));
    }
    let rows = recent
        .iter()
        .map(|id| reprs.get(id).cloned().ok_or_else(|| Error::MissingRepr(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack_rows(&rows)
}

pub fn encode_user(
    history: &ClickHistory,
    reprs: &BTreeMap<String, Tensor>,
    params: &ParamStore,
    cfg: &ModelConfig,
) -> Result<UserRepr> {
    let matrix = history_matrix(history, reprs, cfg)?;
    let mut g = Graph::new();
    let h = g.constant(matrix)?;
    let vars = encode_user_graph(&mut g, h, params, cfg)?;
    Ok(UserRepr {
        user_id: history.user_id.clone(),
        long_vec: g.value(vars.long).clone(),
        short_vec: g.value(vars.short).clone(),
        combined: g.value(vars.combined).clone(),
    })
}
