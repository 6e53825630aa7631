#![allow(dead_code)]

use std::collections::BTreeMap;

use fednews::config::{ModelConfig, TrainConfig};
use fednews::data::{generate_synthetic_dataset, SyntheticSpec};
use fednews::nn::{Graph, ParamStore, Tensor, Var};
use fednews::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod fd;
pub mod oracles;
pub mod equiv;
pub mod secure;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so that two near-zero values compare as equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output element matters.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let r = rand_tensor(&mut rng(seed), &shape);
    let c = g.constant(r)?;
    let prod = g.mul(out, c)?;
    g.sum(prod)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients with respect to graph inputs.
pub fn check_inputs<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone()).unwrap()).collect();
        let loss = build(&mut g, &vars).unwrap();
        g.value(loss).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone()).unwrap()).collect();
    let loss = build(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], x);
        for j in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] = x.data()[j] + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x.data()[j] - FD_STEP;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Largest relative error for every element of every parameter in `params`.
pub fn check_params<F>(params: &ParamStore, build: F) -> f64
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |p: &ParamStore| {
        let mut g = Graph::new();
        let loss = build(&mut g, p).unwrap();
        g.value(loss).item().unwrap()
    };
    let mut g = Graph::new();
    let loss = build(&mut g, params).unwrap();
    let analytic = g.backward_params(loss, params).unwrap();
    check_store(params, &analytic, eval)
}

/// Compares `analytic` with central differences of `f` over every element.
pub fn check_store(params: &ParamStore, analytic: &ParamStore, f: impl Fn(&ParamStore) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for (path, t) in params.iter() {
        let a = analytic.get(path).unwrap();
        for j in 0..t.len() {
            let mut p = params.clone();
            let mut v = t.clone();
            v.data_mut()[j] = t.data()[j] + FD_STEP;
            p.set(path, v.clone()).unwrap();
            let up = f(&p);
            v.data_mut()[j] = t.data()[j] - FD_STEP;
            p.set(path, v).unwrap();
            let down = f(&p);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(a.data()[j], numeric);
            if e > worst {
                worst = e;
            }
        }
    }
    worst
}

pub fn tiny_model(d: usize) -> ModelConfig {
    ModelConfig {
        d,
        heads: 2,
        word_dim: 6,
        att_hidden: 5,
        d_img: 4,
        n_long: 6,
        short_window: 3,
        ..ModelConfig::default()
    }
}

/// The desk-scale benchmark model.
pub fn scaled_model() -> ModelConfig {
    ModelConfig { d: 64, heads: 4, word_dim: 32, att_hidden: 32, d_img: 16, short_window: 10, ..ModelConfig::default() }
}

pub fn scaled_train(seed: u64) -> TrainConfig {
    TrainConfig { lr: 3e-3, group_size: 10, k_neg: 4, max_rounds: 200, eval_interval: 20, seed, ..TrainConfig::default() }
}

/// A small synthetic dataset with `d_img = 4`.
pub fn tiny_dataset(n_users: usize, n_news: usize, seed: u64) -> fednews::data::Dataset {
    let spec = SyntheticSpec {
        n_users,
        n_news,
        d_img: 4,
        clicks_min: 4,
        clicks_max: 8,
        train_impressions_per_user: 2,
        test_impressions_per_user: 2,
        k: 3,
        title_len_min: 2,
        title_len_max: 5,
        min_word_freq: 1,
        seed,
        ..SyntheticSpec::default()
    };
    generate_synthetic_dataset(&spec).unwrap().dataset
}

pub fn ids(n: usize, prefix: &str) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn random_reprs(ids: &[String], d: usize, seed: u64) -> BTreeMap<String, Tensor> {
    let mut r = rng(seed);
    ids.iter().map(|id| (id.clone(), rand_tensor(&mut r, &[d]))).collect()
}