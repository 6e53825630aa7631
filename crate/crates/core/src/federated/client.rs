use std::collections::HashMap;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{touched_news, user_loss_sum};
use crate::nn::{clip_gradient_norm, GradStore, Graph, ParamStore, Tensor};
use crate::ranking::TrainingSample;
use crate::secure_agg::{membership_vector, SecretVector};
use crate::user::ClickHistory;

/// A simulated device. Its history and samples are only read locally.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub user_id: String,
    pub history: ClickHistory,
    pub train_samples: Vec<TrainingSample>,
}

impl ClientState {
    /// Catalog indices of every news id in the history and the local samples.
    pub fn local_news(&self, index: &HashMap<String, usize>) -> Result<Vec<usize>> {
        let ids = self.history.clicked.iter().chain(self.train_samples.iter().flat_map(|s| s.candidates()));
        let mut out = ids
            .map(|id| index.get(id).copied().ok_or_else(|| Error::MissingRepr(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn membership(&self, owner: usize, index: &HashMap<String, usize>) -> Result<SecretVector> {
        membership_vector(owner, &self.local_news(index)?, index.len())
    }
}

/// What the server sends each group member.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPayload {
    pub user_params: ParamStore,
    pub pool: Vec<String>,
    pub reprs: Vec<Tensor>,
}

impl RoundPayload {
    pub fn repr_bytes(&self) -> usize {
        self.reprs.iter().map(Tensor::len).sum::<usize>() * 8
    }

    pub fn byte_len(&self) -> usize {
        self.user_params.numel() * 8 + self.repr_bytes()
    }
}

/// Gradients of one client, already clipped and multiplied by its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub user_id: String,
    pub g_user: GradStore,
    /// One `[d]` block per pooled news, zero where untouched.
    pub g_news: Vec<Tensor>,
    pub weight: usize,
    /// Unweighted mean loss, reported to the simulator only.
    pub loss: f64,
}

impl ClientUpdate {
    /// `g_user ‖ g_news ‖ [weight]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.g_user.flatten();
        for t in &self.g_news {
            out.extend_from_slice(t.data());
        }
        out.push(self.weight as f64);
        out
    }

    pub fn to_secret(&self, owner: usize, frac_bits: u32) -> SecretVector {
        SecretVector { owner, values: self.flatten(), frac_bits }
    }
}

fn clip_blocks(blocks: &mut [Tensor], delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("clip threshold must be positive, got {delta}")));
    }
    let norm = blocks.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > delta {
        blocks.iter_mut().for_each(|b| b.scale_in_place(delta / norm));
    }
    Ok(())
}

/// Mean loss over the client's samples with pooled representations as
/// differentiable inputs. Each gradient part is clipped to `clip` (when set)
/// and then multiplied by `|B_u|`.
pub fn client_local_train(
    client: &ClientState,
    payload: &RoundPayload,
    cfg: &ModelConfig,
    clip: Option<f64>,
) -> Result<ClientUpdate> {
    let n = client.train_samples.len();
    if n == 0 {
        return Err(Error::Contract(format!("client {} has no training samples", client.user_id)));
    }
    let pos: HashMap<&str, usize> = payload.pool.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let history = client.history.recent(cfg.n_long);
    let mut g = Graph::new();
    let mut inputs = HashMap::new();
    let mut touched = Vec::new();
    for id in touched_news(history, &client.train_samples) {
        let p = *pos
            .get(id.as_str())
            .ok_or_else(|| Error::Consistency(format!("news {id} used by a client is not in the pool")))?;
        let v = g.input(payload.reprs[p].clone())?;
        inputs.insert(id.clone(), v);
        touched.push((p, v));
    }
    let total = user_loss_sum(&mut g, &payload.user_params, cfg, history, &client.train_samples, &inputs)?;
    let mean = g.scale(total, 1.0 / n as f64)?;
    let loss = g.value(mean).item()?;
    let grads = g.backward(mean)?;

    let mut g_user = g.param_grads(&grads, &payload.user_params);
    let mut g_news: Vec<Tensor> = payload.reprs.iter().map(|r| Tensor::zeros(r.shape())).collect();
    for (p, v) in touched {
        g_news[p] = grads.get_or_zeros(v, &payload.reprs[p]);
    }
    if let Some(delta) = clip {
        g_user = clip_gradient_norm(&g_user, delta)?;
        clip_blocks(&mut g_news, delta)?;
    }
    g_user.scale(n as f64);
    g_news.iter_mut().for_each(|t| t.scale_in_place(n as f64));
    Ok(ClientUpdate { user_id: client.user_id.clone(), g_user, g_news, weight: n, loss })
}
