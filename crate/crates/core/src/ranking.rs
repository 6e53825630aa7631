//! Click scoring, negative sampling, softmax cross-entropy loss and ranking
//! metrics (AUC, MRR, nDCG@5, nDCG@10).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Impression {
    pub impression_id: String,
    pub user_id: String,
    pub timestamp: String,
    /// `(news_id, clicked)` in display order.
    pub candidates: Vec<(String, bool)>,
}

/// One clicked news and `K` non-clicked news from the same impression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub user_id: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

impl TrainingSample {
    /// Positive first, then negatives.
    pub fn candidates(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.positive).chain(&self.negatives)
    }
}

pub fn click_score(u: &Tensor, n: &Tensor) -> Result<f64> {
    u.dot(n)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleBuild {
    pub samples: Vec<TrainingSample>,
    /// Impressions with clicks but no non-clicked candidates.
    pub skipped: usize,
}

/// One sample per clicked candidate. Negatives are drawn without replacement
/// from the impression's non-clicked candidates, topped up with replacement
/// when there are fewer than `k`.
pub fn build_training_samples(impressions: &[Impression], k: usize, seed: u64) -> Result<SampleBuild> {
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SampleBuild::default();
    for imp in impressions {
        let positives: Vec<&String> = imp.candidates.iter().filter(|c| c.1).map(|c| &c.0).collect();
        if positives.is_empty() {
            continue;
        }
        let negatives: Vec<&String> = imp.candidates.iter().filter(|c| !c.1).map(|c| &c.0).collect();
        if negatives.is_empty() {
            out.skipped += 1;
            log::warn!("impression {} has clicks but no non-clicked candidates", imp.impression_id);
            continue;
        }
        for pos in positives {
            let mut picked: Vec<String> =
                negatives.choose_multiple(&mut rng, k.min(negatives.len())).map(|s| (*s).clone()).collect();
            while picked.len() < k {
                picked.push(negatives[rng.gen_range(0..negatives.len())].clone());
            }
            out.samples.push(TrainingSample { user_id: imp.user_id.clone(), positive: pos.clone(), negatives: picked });
        }
    }
    Ok(out)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `−log(exp(s_pos) / (exp(s_pos) + Σ exp(s_neg)))`.
pub fn sample_loss(s_pos: f64, s_negs: &[f64]) -> f64 {
    let all = std::iter::once(s_pos).chain(s_negs.iter().copied());
    (log_sum_exp(all) - s_pos).max(0.0)
}

/// Mean of per-sample losses.
pub fn batch_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Contract("batch_loss needs at least one sample".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Records the loss of one sample: `user` is `[d]`, `candidates[0]` the positive.
pub fn sample_loss_graph(g: &mut Graph, user: Var, candidates: &[Var]) -> Result<Var> {
    let d = g.value(user).len();
    let cand = g.stack_rows(candidates)?;
    let u_col = g.reshape(user, vec![d, 1])?;
    let scores = g.matmul(cand, u_col)?;
    let scores = g.reshape(scores, vec![candidates.len()])?;
    g.softmax_xent_first(scores)
}

/// Mean of scalar nodes.
pub fn mean_graph(g: &mut Graph, losses: &[Var]) -> Result<Var> {
    if losses.is_empty() {
        return Err(Error::Contract("batch_loss needs at least one sample".into()));
    }
    let stacked = g.stack_rows(losses)?;
    let total = g.sum(stacked)?;
    g.scale(total, 1.0 / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpressionMetrics {
    /// `None` when the impression lacks a positive or a negative.
    pub auc: Option<f64>,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

/// Candidate indices by descending score; ties keep the original order.
fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn dcg_at(labels_in_rank_order: impl Iterator<Item = f64>, k: usize) -> f64 {
    labels_in_rank_order.take(k).enumerate().map(|(i, rel)| rel / ((i + 2) as f64).log2()).sum()
}

fn ndcg_at(order: &[usize], labels: &[bool], k: usize) -> f64 {
    let gain = |b: bool| if b { 1.0 } else { 0.0 };
    let dcg = dcg_at(order.iter().map(|&i| gain(labels[i])), k);
    let n_pos = labels.iter().filter(|&&l| l).count();
    let idcg = dcg_at((0..labels.len()).map(|i| if i < n_pos { 1.0 } else { 0.0 }), k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// AUC via sorted ranks with ties counted as one half.
fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // concordant = Σ over positives of (#negatives below + ½ #negatives tied)
    let mut concordant = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let group = &idx[i..j];
        let pos_in = group.iter().filter(|&&t| labels[t]).count();
        let neg_in = group.len() - pos_in;
        concordant += pos_in as f64 * (neg_below as f64 + 0.5 * neg_in as f64);
        neg_below += neg_in;
        i = j;
    }
    Some(concordant / (n_pos * n_neg) as f64)
}

pub fn evaluate_ranking(scores: &[f64], labels: &[bool]) -> Result<ImpressionMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::EmptySequence("evaluate_ranking"));
    }
    let order = ranking_order(scores);
    let mrr = order.iter().position(|&i| labels[i]).map_or(0.0, |r| 1.0 / (r + 1) as f64);
    Ok(ImpressionMetrics {
        auc: auc(scores, labels),
        mrr,
        ndcg5: ndcg_at(&order, labels, 5),
        ndcg10: ndcg_at(&order, labels, 10),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean over impressions with a defined AUC (0 when there are none).
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub n_impressions: usize,
    pub n_auc: usize,
}

impl MetricsReport {
    /// Averages per-impression metrics, in the given order.
    pub fn from_impressions(per: &[ImpressionMetrics]) -> Self {
        let n = per.len();
        if n == 0 {
            return Self::default();
        }
        let aucs: Vec<f64> = per.iter().filter_map(|m| m.auc).collect();
        let mean = |f: fn(&ImpressionMetrics) -> f64| per.iter().map(f).sum::<f64>() / n as f64;
        Self {
            auc: if aucs.is_empty() { 0.0 } else { aucs.iter().sum::<f64>() / aucs.len() as f64 },
            mrr: mean(|m| m.mrr),
            ndcg5: mean(|m| m.ndcg5),
            ndcg10: mean(|m| m.ndcg10),
            n_impressions: n,
            n_auc: aucs.len(),
        }
    }
}
