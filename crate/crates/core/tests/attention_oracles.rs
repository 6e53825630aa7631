//! Attention layers against literal formulas, plus symmetry properties.

mod common;

use common::oracles::{additive_literal, mhsa_literal, rows};
use common::{rand_tensor, rng};
use fednews::nn::{
    additive_attention_pool, init_additive, init_mhsa, multi_head_self_attention, softmax_rows, Graph, ParamStore,
    Tensor,
};
use proptest::prelude::*;

fn params(seed: u64, d_in: usize, d: usize, hidden: usize) -> ParamStore {
    let mut r = rng(seed);
    let mut p = ParamStore::new();
    init_mhsa(&mut p, "att", d_in, d, &mut r).unwrap();
    init_additive(&mut p, "pool", d_in, hidden, &mut r).unwrap();
    let bumped: Vec<(String, Tensor)> = p.iter().map(|(k, t)| (k.clone(), t.map(|v| v + 0.03))).collect();
    for (k, t) in bumped {
        p.set(&k, t).unwrap();
    }
    p
}

fn mhsa(x: &Tensor, p: &ParamStore, heads: usize) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone()).unwrap();
    let out = multi_head_self_attention(&mut g, v, p, "att", heads).unwrap().output;
    g.value(out).clone()
}

fn pool(x: &Tensor, p: &ParamStore) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone()).unwrap();
    let out = additive_attention_pool(&mut g, v, p, "pool").unwrap().output;
    g.value(out).clone()
}

#[test]
fn mhsa_matches_literal_formula() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let heads = 1 + seed as usize % 4;
        let d = heads * (1 + seed as usize % 3);
        let len = 1 + seed as usize % 6;
        let p = params(seed, 5, d, 4);
        let x = rand_tensor(&mut r, &[len, 5]);
        let got = mhsa(&x, &p, heads);
        let want = mhsa_literal(&rows(&x), &p, "att", heads);
        for (i, row) in want.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                assert!((got.row(i)[c] - w).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn additive_pool_matches_literal_formula() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let p = params(seed, 5, 4, 3 + seed as usize % 4);
        let x = rand_tensor(&mut r, &[1 + seed as usize % 7, 5]);
        let got = pool(&x, &p);
        for (a, b) in got.data().iter().zip(additive_literal(&rows(&x), &p, "pool")) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn single_row_pool_is_identity() {
    let p = params(3, 5, 4, 3);
    let x = rand_tensor(&mut rng(9), &[1, 5]);
    let out = pool(&x, &p);
    for (a, b) in out.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

fn permuted(x: &Tensor, perm: &[usize]) -> Tensor {
    Tensor::stack_rows(&perm.iter().map(|&i| Tensor::vector(x.row(i).to_vec())).collect::<Vec<_>>()).unwrap()
}

fn seq_and_perm() -> impl Strategy<Value = (u64, usize, Vec<usize>)> {
    (1usize..7, any::<u64>()).prop_flat_map(|(len, seed)| {
        (Just(seed), Just(len), Just((0..len).collect::<Vec<_>>()).prop_shuffle())
    })
}

proptest! {
    /// Permuting the input rows permutes the output rows the same way.
    #[test]
    fn mhsa_is_permutation_equivariant((seed, len, perm) in seq_and_perm()) {
        let p = params(seed, 5, 4, 3);
        let x = rand_tensor(&mut rng(seed), &[len, 5]);
        let a = permuted(&mhsa(&x, &p, 2), &perm);
        let b = mhsa(&permuted(&x, &perm), &p, 2);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn pool_is_permutation_invariant((seed, len, perm) in seq_and_perm()) {
        let p = params(seed, 5, 4, 3);
        let x = rand_tensor(&mut rng(seed), &[len, 5]);
        prop_assert!(pool(&x, &p).max_abs_diff(&pool(&permuted(&x, &perm), &p)) < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), n in 1usize..6, m in 1usize..9, scale in 0.1f64..50.0) {
        let x = rand_tensor(&mut rng(seed), &[n, m]).map(|v| v * scale);
        let s = softmax_rows(&x).unwrap();
        for i in 0..n {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|&v| v >= 0.0));
        }
    }
}
