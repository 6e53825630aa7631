//! Single-trainer baseline with the same model and loss, no sharing and no
//! ring arithmetic.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::derive_seed;
use super::run::{nadam_from, should_stop, RoundRecord, Simulation, TrainOutcome, TAG_EPOCH};
use crate::config::{ModelConfig, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{touched_news, user_loss_sum, Model};
use crate::news::{encode_news, NewsContent};
use crate::nn::{nadam_step, GradStore, Graph, OptimizerState};
use crate::ranking::TrainingSample;
use crate::user::ClickHistory;

/// Gradients of the mean loss over `batch` with respect to both models,
/// plus the loss itself. News are encoded inside each user's graph.
pub fn centralized_gradients(
    model: &Model,
    catalog: &BTreeMap<String, NewsContent>,
    users: &BTreeMap<String, ClickHistory>,
    batch: &[TrainingSample],
) -> Result<(GradStore, GradStore, f64)> {
    if batch.is_empty() {
        return Err(Error::Contract("centralized step needs at least one sample".into()));
    }
    let mut by_user: BTreeMap<&str, Vec<TrainingSample>> = BTreeMap::new();
    for s in batch {
        by_user.entry(s.user_id.as_str()).or_default().push(s.clone());
    }
    let total = batch.len() as f64;
    let cfg = &model.config;
    let parts = by_user
        .into_par_iter()
        .map(|(uid, samples)| {
            let history = users.get(uid).map(|h| h.recent(cfg.n_long)).unwrap_or(&[]);
            let mut g = Graph::new();
            let mut news = HashMap::new();
            for id in touched_news(history, &samples) {
                let content = catalog.get(id).ok_or_else(|| Error::MissingRepr(id.clone()))?;
                news.insert(id.clone(), encode_news(&mut g, content, &model.news, cfg)?);
            }
            let sum = user_loss_sum(&mut g, &model.user, cfg, history, &samples, &news)?;
            let scaled = g.scale(sum, 1.0 / total)?;
            let loss = g.value(scaled).item()?;
            let grads = g.backward(scaled)?;
            Ok((g.param_grads(&grads, &model.news), g.param_grads(&grads, &model.user), loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g_news = GradStore::zeros_like(&model.news);
    let mut g_user = GradStore::zeros_like(&model.user);
    let mut loss = 0.0;
    for (n, u, l) in &parts {
        g_news.add_scaled(n, 1.0)?;
        g_user.add_scaled(u, 1.0)?;
        loss += l;
    }
    Ok((g_news, g_user, loss))
}

/// One NAdam step on both models; returns the batch loss.
pub fn centralized_step(
    model: &mut Model,
    news_opt: &mut OptimizerState,
    user_opt: &mut OptimizerState,
    catalog: &BTreeMap<String, NewsContent>,
    users: &BTreeMap<String, ClickHistory>,
    batch: &[TrainingSample],
) -> Result<f64> {
    let (g_news, g_user, loss) = centralized_gradients(model, catalog, users, batch)?;
    nadam_step(&mut model.user, &g_user, user_opt)?;
    nadam_step(&mut model.news, &g_news, news_opt)?;
    Ok(loss)
}

/// Mini-batch training over every eligible client's samples, reshuffled each
/// epoch. Each step is logged as one round.
pub fn centralized_train(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<TrainOutcome> {
    let mut sim = Simulation::new(ds, model_cfg, train)?;
    let samples: Vec<TrainingSample> = sim.clients.iter().flat_map(|c| c.train_samples.iter().cloned()).collect();
    if samples.is_empty() && train.max_rounds > 0 {
        return Err(Error::Contract("no training samples".into()));
    }
    let batch_size = train.batch_size.min(samples.len()).max(1);
    let interval = train.eval_interval.max(1) as u64;
    let nadam = nadam_from(train);
    let mut news_opt = OptimizerState::new(nadam, &sim.server.model.news);
    let mut user_opt = OptimizerState::new(nadam, &sim.server.model.user);
    let mut records = Vec::new();
    let mut aucs = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    if train.max_rounds == 0 {
        let report = sim.evaluate(&sim.eval_impressions)?;
        let mut rec = RoundRecord::empty(0);
        rec.set_metrics(&report);
        on_round(&rec);
        records.push(rec);
    }
    for step in 1..=train.max_rounds as u64 {
        let start = Instant::now();
        if cursor + batch_size > order.len() {
            order = (0..samples.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(train.seed, &[TAG_EPOCH, epoch])));
            epoch += 1;
            cursor = 0;
        }
        let batch: Vec<TrainingSample> = order[cursor..cursor + batch_size].iter().map(|&i| samples[i].clone()).collect();
        cursor += batch_size;
        let loss = centralized_step(
            &mut sim.server.model,
            &mut news_opt,
            &mut user_opt,
            &sim.server.catalog,
            &sim.users,
            &batch,
        )?;
        sim.server.round = step;
        let mut rec = RoundRecord::empty(step);
        rec.group_size = batch.iter().map(|s| s.user_id.as_str()).collect::<HashSet<_>>().len();
        rec.pool_size = batch.iter().flat_map(|s| s.candidates()).collect::<HashSet<_>>().len();
        rec.loss = Some(loss);
        if step % interval == 0 || step == train.max_rounds as u64 {
            let report = sim.evaluate(&sim.eval_impressions)?;
            rec.set_metrics(&report);
            aucs.push(report.auc);
        }
        rec.wall_ms = start.elapsed().as_millis() as u64;
        on_round(&rec);
        records.push(rec);
        if should_stop(&aucs, train.patience, train.tol) {
            break;
        }
    }
    sim.server.news_opt = news_opt;
    sim.server.user_opt = user_opt;
    sim.server.news_reprs = sim.server.model.encode_catalog(&sim.server.catalog)?;
    let final_report = sim.evaluate(&sim.test_impressions)?;
    Ok(TrainOutcome { records, final_report, server: sim.server, aborted_attempts: 0 })
}
