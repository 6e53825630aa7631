use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{client_local_train, ClientState, ClientUpdate};
use super::server::{aggregate_gradients, compute_news_pool, ServerState};
use super::{derive_seed, sample_group};
use crate::config::{ModelConfig, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{evaluate_with, Model};
use crate::nn::NadamConfig;
use crate::ranking::{build_training_samples, Impression, MetricsReport, TrainingSample};
use crate::secure_agg::PairwiseStreams;
use crate::user::ClickHistory;

pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_SAMPLES: u64 = 2;
const TAG_GROUP: u64 = 3;
const TAG_DROP: u64 = 4;
const TAG_STREAMS: u64 = 5;
pub(crate) const TAG_EPOCH: u64 = 6;

/// One row of the round log. Metric columns are empty on rounds without an
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub group_size: usize,
    pub pool_size: usize,
    pub payload_bytes: usize,
    pub share_bytes: usize,
    pub loss: Option<f64>,
    pub auc: Option<f64>,
    pub mrr: Option<f64>,
    pub ndcg5: Option<f64>,
    pub ndcg10: Option<f64>,
    pub wall_ms: u64,
    /// Pooled-representation part of one client's download.
    #[serde(skip)]
    pub repr_payload_bytes: usize,
    /// What that part would be if the whole catalog were sent.
    #[serde(skip)]
    pub catalog_repr_bytes: usize,
}

impl RoundRecord {
    pub(crate) fn empty(round: u64) -> Self {
        Self {
            round,
            group_size: 0,
            pool_size: 0,
            payload_bytes: 0,
            share_bytes: 0,
            loss: None,
            auc: None,
            mrr: None,
            ndcg5: None,
            ndcg10: None,
            wall_ms: 0,
            repr_payload_bytes: 0,
            catalog_repr_bytes: 0,
        }
    }

    pub fn total_bytes(&self) -> usize {
        self.payload_bytes + self.share_bytes
    }

    pub(crate) fn set_metrics(&mut self, m: &MetricsReport) {
        self.auc = Some(m.auc);
        self.mrr = Some(m.mrr);
        self.ndcg5 = Some(m.ndcg5);
        self.ndcg10 = Some(m.ndcg10);
    }
}

pub fn write_round_log<W: Write>(w: W, records: &[RoundRecord]) -> Result<()> {
    write_round_log_to(w, records, true)
}

/// As [`write_round_log`]; `header = false` appends rows to an existing log.
pub fn write_round_log_to<W: Write>(w: W, records: &[RoundRecord], header: bool) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(header).from_writer(w);
    if header && records.is_empty() {
        out.write_record([
            "round", "group_size", "pool_size", "payload_bytes", "share_bytes", "loss", "auc", "mrr", "ndcg5",
            "ndcg10", "wall_ms",
        ])?;
    }
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<RoundRecord>,
    pub final_report: MetricsReport,
    pub server: ServerState,
    pub aborted_attempts: usize,
}

/// Groups training samples by user and keeps users who can train: a
/// non-empty history and at least one sample. Returns the clients (sorted
/// by id) and the number of users left out.
pub fn build_clients(ds: &Dataset, k_neg: usize, seed: u64) -> Result<(Vec<ClientState>, usize)> {
    let built = build_training_samples(&ds.train, k_neg, derive_seed(seed, &[TAG_SAMPLES]))?;
    let mut by_user: BTreeMap<String, Vec<TrainingSample>> = BTreeMap::new();
    for s in built.samples {
        by_user.entry(s.user_id.clone()).or_default().push(s);
    }
    let mut clients = Vec::new();
    let mut skipped = 0;
    for (user_id, samples) in by_user {
        match ds.users.get(&user_id) {
            Some(h) if !h.clicked.is_empty() => {
                clients.push(ClientState { user_id, history: h.clone(), train_samples: samples })
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::info!("{skipped} users without history or samples excluded from training");
    }
    Ok((clients, skipped))
}

pub fn nadam_from(train: &TrainConfig) -> NadamConfig {
    NadamConfig { lr: train.lr, beta1: train.beta1, beta2: train.beta2, eps: train.eps }
}

/// In-process federation: one server, every eligible client, and the
/// central evaluation harness.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub index: HashMap<String, usize>,
    pub news_ids: Vec<String>,
    pub users: BTreeMap<String, ClickHistory>,
    pub eval_impressions: Vec<Impression>,
    pub test_impressions: Vec<Impression>,
    pub train: TrainConfig,
    pub skipped_clients: usize,
    pub aborted_attempts: usize,
}

impl Simulation {
    pub fn new(ds: &Dataset, model_cfg: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        let model = Model::init(model_cfg, ds.vocab.len(), derive_seed(train.seed, &[TAG_INIT]))?;
        let server = ServerState::new(model, ds.catalog.clone(), nadam_from(train))?;
        Self::with_server(ds, server, train)
    }

    /// Wraps an existing (e.g. restored) server.
    pub fn with_server(ds: &Dataset, server: ServerState, train: &TrainConfig) -> Result<Self> {
        train.validate()?;
        let (clients, skipped_clients) = build_clients(ds, train.k_neg, train.seed)?;
        let eval_impressions = if ds.val.is_empty() { ds.test.clone() } else { ds.val.clone() };
        Ok(Self {
            index: ds.news_index(),
            news_ids: ds.news_ids(),
            server,
            clients,
            users: ds.users.clone(),
            eval_impressions,
            test_impressions: ds.test.clone(),
            train: train.clone(),
            skipped_clients,
            aborted_attempts: 0,
        })
    }

    pub fn client_ids(&self) -> Vec<String> {
        self.clients.iter().map(|c| c.user_id.clone()).collect()
    }

    pub fn evaluate(&self, impressions: &[Impression]) -> Result<MetricsReport> {
        let reprs = self.server.model.encode_catalog(&self.server.catalog)?;
        evaluate_with(&reprs, &self.server.model.user, &self.server.model.config, &self.users, impressions)
    }

    /// Runs the next round, resampling the group after a dropout until the
    /// retry budget is spent.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let t = self.server.round;
        for attempt in 0..=self.train.retry_budget {
            match self.attempt_round(t, attempt as u64) {
                Err(Error::Dropout(who)) => {
                    log::warn!("round {} attempt {attempt}: participant {who} dropped out", t + 1);
                    self.aborted_attempts += 1;
                }
                other => return other,
            }
        }
        Err(Error::Protocol(format!(
            "round {} aborted {} times; retry budget exhausted",
            t + 1,
            self.train.retry_budget + 1
        )))
    }

    fn attempt_round(&mut self, t: u64, attempt: u64) -> Result<RoundRecord> {
        let start = Instant::now();
        let seed = self.train.seed;
        let m = self.train.group_size;
        let group = sample_group(&self.client_ids(), m, derive_seed(seed, &[TAG_GROUP, t, attempt]))?;
        let members: Vec<&ClientState> = group
            .iter()
            .map(|id| {
                let i = self.clients.binary_search_by(|c| c.user_id.cmp(id)).expect("group drawn from clients");
                &self.clients[i]
            })
            .collect();

        let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_DROP, t, attempt]));
        let p = self.train.dropout_prob;
        let mut draw = || (0..m).map(|_| p > 0.0 && drop_rng.gen::<f64>() < p).collect::<Vec<bool>>();
        let (drop_pool, drop_grad) = (draw(), draw());
        let streams = PairwiseStreams { master_seed: derive_seed(seed, &[TAG_STREAMS, attempt]) };

        let pool = compute_news_pool(&members, &self.index, streams, 2 * t, &drop_pool, None)?;
        let mut record = RoundRecord {
            group_size: m,
            pool_size: pool.pool.len(),
            share_bytes: pool.stats.share_bytes + pool.stats.server_bytes,
            catalog_repr_bytes: self.server.catalog_repr_bytes(),
            ..RoundRecord::empty(t + 1)
        };
        if pool.pool.is_empty() {
            log::info!("round {}: empty pool, skipped", t + 1);
            self.server.round += 1;
            record.wall_ms = start.elapsed().as_millis() as u64;
            return Ok(record);
        }
        let pool_ids: Vec<String> = pool.pool.iter().map(|&i| self.news_ids[i].clone()).collect();
        let payload = self.server.distribute_round_payload(&pool_ids)?;
        record.payload_bytes = m * payload.byte_len();
        record.repr_payload_bytes = payload.repr_bytes();

        let cfg = &self.server.model.config;
        let clip = self.train.clip_delta;
        let updates: Vec<ClientUpdate> =
            members.par_iter().map(|c| client_local_train(c, &payload, cfg, clip)).collect::<Result<_>>()?;
        let d = cfg.d;
        let agg = aggregate_gradients(
            &updates,
            &self.server.model.user,
            d,
            self.train.frac_bits,
            streams,
            2 * t + 1,
            &drop_grad,
            None,
        )?;
        let w: f64 = updates.iter().map(|u| u.weight as f64).sum();
        record.loss = Some(updates.iter().map(|u| u.weight as f64 * u.loss).sum::<f64>() / w);

        if let Some(agg) = agg {
            record.share_bytes += agg.stats.share_bytes + agg.stats.server_bytes;
            self.server.update_user_model(&agg.g_user)?;
            let full = (t + 1) % self.train.catalog_refresh.max(1) as u64 == 0;
            self.server.update_news_model(&pool_ids, &agg.g_news, full)?;
        }
        self.server.round += 1;
        record.wall_ms = start.elapsed().as_millis() as u64;
        Ok(record)
    }
}

/// Early-stopping rule: stop once the best AUC of the last `patience`
/// evaluations fails to beat the earlier best by `tol`.
pub(crate) fn should_stop(aucs: &[f64], patience: Option<usize>, tol: f64) -> bool {
    let Some(p) = patience else { return false };
    if p == 0 || aucs.len() <= p {
        return false;
    }
    let (before, recent) = aucs.split_at(aucs.len() - p);
    let best_before = before.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best_recent = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best_recent < best_before + tol
}

/// Runs rounds until `max_rounds` (counting rounds already completed by the
/// server) or early stop, evaluating every `eval_interval` rounds.
pub fn run_simulation(sim: &mut Simulation, mut on_round: impl FnMut(&RoundRecord)) -> Result<TrainOutcome> {
    let max_rounds = sim.train.max_rounds as u64;
    let interval = sim.train.eval_interval.max(1) as u64;
    let mut records = Vec::new();
    let mut aucs = Vec::new();
    if sim.server.round >= max_rounds {
        let report = sim.evaluate(&sim.eval_impressions)?;
        let mut rec = RoundRecord::empty(sim.server.round);
        rec.catalog_repr_bytes = sim.server.catalog_repr_bytes();
        rec.set_metrics(&report);
        on_round(&rec);
        records.push(rec);
    }
    while sim.server.round < max_rounds {
        let mut rec = sim.run_round()?;
        if rec.round % interval == 0 || rec.round == max_rounds {
            let report = sim.evaluate(&sim.eval_impressions)?;
            rec.set_metrics(&report);
            aucs.push(report.auc);
        }
        on_round(&rec);
        records.push(rec);
        if should_stop(&aucs, sim.train.patience, sim.train.tol) {
            log::info!("early stop after round {}", sim.server.round);
            break;
        }
    }
    let final_report = sim.evaluate(&sim.test_impressions)?;
    Ok(TrainOutcome { records, final_report, server: sim.server.clone(), aborted_attempts: sim.aborted_attempts })
}

pub fn run_training(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    on_round: impl FnMut(&RoundRecord),
) -> Result<TrainOutcome> {
    let mut sim = Simulation::new(ds, model_cfg, train)?;
    run_simulation(&mut sim, on_round)
}
