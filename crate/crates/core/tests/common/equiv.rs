//! One full-participation federated round against one centralized step.

use fednews::config::TrainConfig;
use fednews::federated::run::nadam_from;
use fednews::federated::{
    aggregate_gradients, centralized_gradients, centralized_step, client_local_train, ClientUpdate, ServerState,
    Simulation,
};
use fednews::nn::{OptimizerState, Tensor};
use fednews::secure_agg::PairwiseStreams;
use rand::Rng;

pub struct RoundGap {
    /// Max-abs parameter difference after the update.
    pub params: f64,
    /// Max-abs difference of the aggregated user gradient.
    pub user_grad: f64,
    /// `M · 2^-(f+1)`.
    pub grad_bound: f64,
}

/// Runs both paths from the same initial model on every client's samples.
pub fn round_vs_step(frac_bits: u32, d: usize, seed: u64) -> RoundGap {
    let ds = super::tiny_dataset(8, 40, seed);
    let model = super::tiny_model(d);
    let train = TrainConfig {
        lr: 6e-5,
        group_size: 2,
        k_neg: 3,
        max_rounds: 1,
        clip_delta: None,
        frac_bits,
        seed,
        ..TrainConfig::default()
    };
    let mut sim = Simulation::new(&ds, &model, &train).unwrap();
    let m = sim.clients.len();
    sim.train.group_size = m;
    let mut central = sim.server.model.clone();
    let batch: Vec<_> = sim.clients.iter().flat_map(|c| c.train_samples.clone()).collect();

    // Aggregated user gradient versus the centralized one.
    let (_, g_user, _) = centralized_gradients(&central, &ds.catalog, &ds.users, &batch).unwrap();
    let payload = sim.server.distribute_round_payload(&sim.news_ids).unwrap();
    let ups: Vec<ClientUpdate> = sim.clients.iter().map(|c| client_local_train(c, &payload, &model, None).unwrap()).collect();
    let agg = aggregate_gradients(&ups, &central.user, d, frac_bits, PairwiseStreams { master_seed: seed }, 1, &vec![false; m], None)
        .unwrap()
        .unwrap();
    let user_grad = g_user.max_abs_diff(&agg.g_user);

    let mut news_opt = OptimizerState::new(nadam_from(&train), &central.news);
    let mut user_opt = OptimizerState::new(nadam_from(&train), &central.user);
    centralized_step(&mut central, &mut news_opt, &mut user_opt, &ds.catalog, &ds.users, &batch).unwrap();
    sim.run_round().unwrap();
    let params = sim.server.model.news.max_abs_diff(&central.news).max(sim.server.model.user.max_abs_diff(&central.user));
    RoundGap { params, user_grad, grad_bound: m as f64 * 2f64.powi(-(frac_bits as i32) - 1) }
}

/// Integer-valued client gradients: secure aggregation followed by the
/// server update is bit-identical to the plaintext weighted mean followed by
/// the same update.
pub fn integer_fixture_is_bitwise(seed: u64) -> bool {
    let ds = super::tiny_dataset(6, 30, seed);
    let model = super::tiny_model(8);
    let train = TrainConfig { group_size: 2, k_neg: 3, seed, ..TrainConfig::default() };
    let sim = Simulation::new(&ds, &model, &train).unwrap();
    let server: ServerState = sim.server.clone();
    let pool: Vec<String> = sim.news_ids.iter().take(12).cloned().collect();
    let mut r = super::rng(seed);
    let m = 5;
    let ups: Vec<ClientUpdate> = (0..m)
        .map(|i| {
            let weight = r.gen_range(1..=9);
            let mut g_user = server.model.user.clone();
            let keys: Vec<String> = g_user.keys().cloned().collect();
            for k in keys {
                let shape = g_user.get(&k).unwrap().shape().to_vec();
                let n = shape.iter().product();
                let vals = (0..n).map(|_| (r.gen_range(-50i64..50) * weight as i64) as f64).collect();
                let t = Tensor::new(shape, vals).unwrap();
                g_user.set(&k, t).unwrap();
            }
            let g_news = pool
                .iter()
                .map(|_| Tensor::vector((0..8).map(|_| (r.gen_range(-50i64..50) * weight as i64) as f64).collect()))
                .collect();
            ClientUpdate { user_id: format!("u{i}"), g_user, g_news, weight, loss: 0.0 }
        })
        .collect();
    let agg = aggregate_gradients(&ups, &server.model.user, 8, 24, PairwiseStreams { master_seed: seed }, 0, &vec![false; m], None)
        .unwrap()
        .unwrap();
    let total: f64 = ups.iter().map(|u| u.weight as f64).sum();
    let mut plain_user = ups[0].g_user.clone();
    for u in &ups[1..] {
        plain_user.add_scaled(&u.g_user, 1.0).unwrap();
    }
    let divided: Vec<f64> = plain_user.flatten().into_iter().map(|v| v / total).collect();
    let plain_user = plain_user.unflatten_like(&divided).unwrap();
    let plain_news: Vec<Tensor> = (0..pool.len())
        .map(|p| {
            let mut acc = ups[0].g_news[p].clone();
            ups[1..].iter().for_each(|u| acc.add_assign(&u.g_news[p]).unwrap());
            acc.map(|v| v / total)
        })
        .collect();
    let before = server.model.clone();
    let mut a = server.clone();
    let mut b = server;
    a.update_user_model(&agg.g_user).unwrap();
    a.update_news_model(&pool, &agg.g_news, false).unwrap();
    b.update_user_model(&plain_user).unwrap();
    b.update_news_model(&pool, &plain_news, false).unwrap();
    a.model != before && a.model == b.model && a.news_opt == b.news_opt && a.news_reprs == b.news_reprs && agg.g_news == plain_news
}
