//! Finite-difference checks for every graph op, layer, encoder and the
//! composed loss. Each returns `(name, worst relative error)`.

use std::collections::BTreeMap;

use fednews::config::ModelConfig;
use fednews::federated::{centralized_gradients, client_local_train, ServerState};
use fednews::model::Model;
use fednews::news::{encode_image, encode_news, encode_news_value, encode_text, fuse_modalities, init_news_params};
use fednews::nn::{
    additive_attention_pool, init_additive, init_mhsa, init_mlp, mlp_forward, multi_head_self_attention, Activation,
    NadamConfig, ParamStore, Tensor,
};
use fednews::user::{encode_long_term, encode_short_term, encode_user_graph, init_user_params};
use rand::Rng;

use super::{check_inputs, check_params, check_store, project, rand_tensor, rng, FD_STEP};

pub type Check = (&'static str, f64);

fn away_from_zero(t: Tensor) -> Tensor {
    t.map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 })
}

/// Every differentiable op on randomized shapes.
pub fn ops(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let (n, k, m) = (r.gen_range(1..=5), r.gen_range(1..=6), r.gen_range(1..=5));
    let a = rand_tensor(&mut r, &[n, k]);
    let a2 = rand_tensor(&mut r, &[n, k]);
    let b = rand_tensor(&mut r, &[k, m]);
    let row = rand_tensor(&mut r, &[k]);
    let c = rand_tensor(&mut r, &[n, m]);
    let v = rand_tensor(&mut r, &[k]);
    let table = rand_tensor(&mut r, &[6, m]);
    let ids: Vec<usize> = (0..n + 1).map(|_| r.gen_range(0..6)).collect();
    let s = seed + 100;
    vec![
        ("matmul", check_inputs(&[a.clone(), b.clone()], |g, x| {
            let y = g.matmul(x[0], x[1])?;
            project(g, y, s)
        })),
        ("transpose", check_inputs(&[a.clone()], |g, x| {
            let y = g.transpose(x[0])?;
            project(g, y, s)
        })),
        ("add", check_inputs(&[a.clone(), a2.clone()], |g, x| {
            let y = g.add(x[0], x[1])?;
            project(g, y, s)
        })),
        ("add_row", check_inputs(&[a.clone(), row.clone()], |g, x| {
            let y = g.add_row(x[0], x[1])?;
            project(g, y, s)
        })),
        ("mul", check_inputs(&[a.clone(), a2.clone()], |g, x| {
            let y = g.mul(x[0], x[1])?;
            project(g, y, s)
        })),
        ("scale", check_inputs(&[a.clone()], |g, x| {
            let y = g.scale(x[0], -1.7)?;
            project(g, y, s)
        })),
        ("tanh", check_inputs(&[a.clone()], |g, x| {
            let y = g.tanh(x[0])?;
            project(g, y, s)
        })),
        ("relu", check_inputs(&[away_from_zero(a.clone())], |g, x| {
            let y = g.relu(x[0])?;
            project(g, y, s)
        })),
        ("softmax_rows", check_inputs(&[a.clone()], |g, x| {
            let y = g.softmax_rows(x[0])?;
            project(g, y, s)
        })),
        ("slice_rows", check_inputs(&[a.clone()], |g, x| {
            let y = g.slice_rows(x[0], n / 2, n)?;
            project(g, y, s)
        })),
        ("slice_cols", check_inputs(&[a.clone()], |g, x| {
            let y = g.slice_cols(x[0], k / 2, k)?;
            project(g, y, s)
        })),
        ("concat_cols", check_inputs(&[a.clone(), c.clone()], |g, x| {
            let y = g.concat_cols(&[x[0], x[1], x[0]])?;
            project(g, y, s)
        })),
        ("stack_rows", check_inputs(&[v.clone(), row.clone()], |g, x| {
            let y = g.stack_rows(&[x[0], x[1], x[0]])?;
            project(g, y, s)
        })),
        ("gather", check_inputs(&[table], |g, x| {
            let y = g.gather(x[0], &ids)?;
            project(g, y, s)
        })),
        ("reshape", check_inputs(&[a.clone()], |g, x| {
            let y = g.reshape(x[0], vec![n * k])?;
            project(g, y, s)
        })),
        ("softmax_xent_first", check_inputs(&[v], |g, x| g.softmax_xent_first(x[0]))),
    ]
}

/// MLP, multi-head self-attention and additive pooling, with respect to
/// both parameters and inputs.
pub fn layers(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let heads = r.gen_range(1..=3);
    let d = heads * r.gen_range(1..=4);
    let d_in = r.gen_range(2..=8);
    let len = r.gen_range(1..=5);
    let hidden = r.gen_range(2..=6);
    let seq = rand_tensor(&mut r, &[len, d_in]);
    let seq_d = rand_tensor(&mut r, &[len, d]);
    let x = rand_tensor(&mut r, &[d_in]);

    let mut p = ParamStore::new();
    init_mlp(&mut p, "mlp", &[d_in, d, 3], &mut r).unwrap();
    init_mhsa(&mut p, "att", d_in, d, &mut r).unwrap();
    init_additive(&mut p, "pool", d, hidden, &mut r).unwrap();
    // Non-zero biases so their gradients are exercised away from init.
    let p = {
        let mut q = p.clone();
        for (k, t) in p.iter() {
            q.set(k, t.map(|v| v + 0.05)).unwrap();
        }
        q
    };
    let s = seed + 200;
    let only = |prefix: &str| p.filter_prefix(prefix);
    let (mlp_p, att_p, pool_p) = (only("mlp"), only("att"), only("pool"));
    vec![
        ("mlp tanh params", check_params(&mlp_p, |g, p| {
            let xi = g.constant(x.clone())?;
            let y = mlp_forward(g, xi, p, "mlp", Activation::Tanh)?;
            project(g, y, s)
        })),
        ("mlp identity inputs", check_inputs(&[seq.clone()], |g, v| {
            let y = mlp_forward(g, v[0], &mlp_p, "mlp", Activation::Identity)?;
            project(g, y, s)
        })),
        ("mhsa params", check_params(&att_p, |g, p| {
            let xi = g.constant(seq.clone())?;
            let y = multi_head_self_attention(g, xi, p, "att", heads)?.output;
            project(g, y, s)
        })),
        ("mhsa inputs", check_inputs(&[seq.clone()], |g, v| {
            let y = multi_head_self_attention(g, v[0], &att_p, "att", heads)?.output;
            project(g, y, s)
        })),
        ("additive pool params", check_params(&pool_p, |g, p| {
            let xi = g.constant(seq_d.clone())?;
            let y = additive_attention_pool(g, xi, p, "pool")?.output;
            project(g, y, s)
        })),
        ("additive pool inputs", check_inputs(&[seq_d.clone()], |g, v| {
            let y = additive_attention_pool(g, v[0], &pool_p, "pool")?.output;
            project(g, y, s)
        })),
    ]
}

fn small_cfg(r: &mut impl Rng) -> ModelConfig {
    let heads = r.gen_range(1..=2);
    let d = heads * r.gen_range(2..=4);
    ModelConfig {
        d,
        heads,
        word_dim: r.gen_range(2..=5),
        att_hidden: r.gen_range(2..=5),
        d_img: r.gen_range(2..=4),
        n_long: 5,
        short_window: r.gen_range(1..=4),
        ..ModelConfig::default()
    }
}

pub fn news_encoders(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let cfg = small_cfg(&mut r);
    let vocab = 7;
    let p = init_news_params(&cfg, vocab, &mut r).unwrap();
    let tokens: Vec<usize> = (0..r.gen_range(1..=4)).map(|_| r.gen_range(0..vocab)).collect();
    let feat = rand_tensor(&mut r, &[cfg.d_img]);
    let t_in = rand_tensor(&mut r, &[cfg.d]);
    let i_in = rand_tensor(&mut r, &[cfg.d]);
    let content = fednews::news::NewsContent {
        news_id: "N".into(),
        category: None,
        title: String::new(),
        title_tokens: tokens.clone(),
        image_feature: Some(feat.data().to_vec()),
    };
    let no_image = fednews::news::NewsContent { image_feature: None, ..content.clone() };
    let s = seed + 300;
    vec![
        ("text encoder", check_params(&p, |g, p| {
            let y = encode_text(g, &tokens, p, &cfg)?;
            project(g, y, s)
        })),
        ("image encoder", check_params(&p, |g, p| {
            let f = g.constant(feat.clone())?;
            let y = encode_image(g, Some(f), p, &cfg)?;
            project(g, y, s)
        })),
        ("image placeholder", check_params(&p, |g, p| {
            let y = encode_image(g, None, p, &cfg)?;
            project(g, y, s)
        })),
        ("fusion", check_inputs(&[t_in, i_in], |g, v| {
            let y = fuse_modalities(g, v[0], v[1], &p)?.output;
            project(g, y, s)
        })),
        ("news encoder", check_params(&p, |g, p| {
            let y = encode_news(g, &content, p, &cfg)?;
            project(g, y, s)
        })),
        ("news encoder without image", check_params(&p, |g, p| {
            let y = encode_news(g, &no_image, p, &cfg)?;
            project(g, y, s)
        })),
    ]
}

pub fn user_encoders(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let cfg = small_cfg(&mut r);
    let p = init_user_params(&cfg, &mut r).unwrap();
    let len = r.gen_range(1..=cfg.n_long);
    let hist = rand_tensor(&mut r, &[len, cfg.d]);
    let s = seed + 400;
    vec![
        ("long-term", check_params(&p, |g, p| {
            let h = g.constant(hist.clone())?;
            let y = encode_long_term(g, h, p, &cfg)?;
            project(g, y, s)
        })),
        ("short-term", check_params(&p, |g, p| {
            let h = g.constant(hist.clone())?;
            let y = encode_short_term(g, h, p, &cfg)?;
            project(g, y, s)
        })),
        ("user encoder params", check_params(&p, |g, p| {
            let h = g.constant(hist.clone())?;
            let y = encode_user_graph(g, h, p, &cfg)?.combined;
            project(g, y, s)
        })),
        ("user encoder history", check_inputs(&[hist.clone()], |g, v| {
            let y = encode_user_graph(g, v[0], &p, &cfg)?.combined;
            project(g, y, s)
        })),
    ]
}

/// Mean batch loss with news encoded in-graph, both parameter sets.
pub fn full_loss(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let d = 2 * r.gen_range(2..=4);
    let ds = super::tiny_dataset(3, 16, seed);
    let cfg = ModelConfig { short_window: r.gen_range(1..=4), ..super::tiny_model(d) };
    let model = Model::init(&cfg, ds.vocab.len(), seed).unwrap();
    let (clients, _) = fednews::federated::run::build_clients(&ds, 2, seed).unwrap();
    let batch: Vec<_> = clients.iter().take(2).flat_map(|c| c.train_samples.iter().take(2).cloned()).collect();
    let (g_news, g_user, _) = centralized_gradients(&model, &ds.catalog, &ds.users, &batch).unwrap();
    let loss = |m: &Model| centralized_gradients(m, &ds.catalog, &ds.users, &batch).unwrap().2;
    vec![
        ("full loss / news params", check_store(&model.news, &g_news, |p| {
            loss(&Model { news: p.clone(), ..model.clone() })
        })),
        ("full loss / user params", check_store(&model.user, &g_user, |p| {
            loss(&Model { user: p.clone(), ..model.clone() })
        })),
    ]
}

fn server_fixture(seed: u64) -> (fednews::data::Dataset, ServerState, Vec<fednews::federated::ClientState>) {
    let ds = super::tiny_dataset(3, 16, seed);
    let model = Model::init(&super::tiny_model(8), ds.vocab.len(), seed).unwrap();
    let server = ServerState::new(model, ds.catalog.clone(), NadamConfig::default()).unwrap();
    let (mut clients, _) = fednews::federated::run::build_clients(&ds, 2, seed).unwrap();
    for c in &mut clients {
        c.train_samples.truncate(2);
    }
    (ds, server, clients)
}

/// Client gradient with respect to the pooled representations it was sent.
pub fn client_repr_gradient(seed: u64) -> Check {
    let (_, server, clients) = server_fixture(seed);
    let client = &clients[0];
    let pool = server.news_ids();
    let payload = server.distribute_round_payload(&pool).unwrap();
    let cfg = &server.model.config;
    let up = client_local_train(client, &payload, cfg, None).unwrap();
    let w = up.weight as f64;
    let mut worst = 0.0f64;
    for (i, repr) in payload.reprs.iter().enumerate() {
        for j in 0..repr.len() {
            let mut p = payload.clone();
            p.reprs[i].data_mut()[j] = repr.data()[j] + FD_STEP;
            let up_l = client_local_train(client, &p, cfg, None).unwrap().loss;
            p.reprs[i].data_mut()[j] = repr.data()[j] - FD_STEP;
            let down_l = client_local_train(client, &p, cfg, None).unwrap().loss;
            let numeric = (up_l - down_l) / (2.0 * FD_STEP);
            worst = worst.max(super::rel_err(up.g_news[i].data()[j] / w, numeric));
        }
    }
    ("client ∂L/∂n", worst)
}

/// Server back-propagation of representation gradients into the news model.
pub fn server_chain_rule(seed: u64) -> Check {
    let (_, server, _) = server_fixture(seed);
    let pool: Vec<String> = server.news_ids().into_iter().take(5).collect();
    let mut r = rng(seed + 500);
    let g_news: Vec<Tensor> = pool.iter().map(|_| rand_tensor(&mut r, &[8])).collect();
    let analytic = server.news_model_gradient(&pool, &g_news).unwrap();
    let cfg = server.model.config.clone();
    let catalog: BTreeMap<_, _> = server.catalog.clone();
    let err = check_store(&server.model.news, &analytic, |p| {
        pool.iter()
            .zip(&g_news)
            .map(|(id, gi)| encode_news_value(&catalog[id], p, &cfg).unwrap().dot(gi).unwrap())
            .sum()
    });
    ("server news chain rule", err)
}

/// The complete criterion: every check above on two random draws.
pub fn all() -> Vec<Check> {
    let mut out = Vec::new();
    for seed in [1, 2] {
        out.extend(ops(seed));
        out.extend(layers(seed));
        out.extend(news_encoders(seed));
        out.extend(user_encoders(seed));
    }
    out.extend(full_loss(3));
    out.push(client_repr_gradient(4));
    out.push(server_chain_rule(5));
    out
}
