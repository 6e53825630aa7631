//! Randomized trials for the secure-sum properties.

use fednews::federated::{aggregate_gradients, ClientUpdate};
use fednews::nn::{ParamStore, Tensor};
use fednews::secure_agg::{
    make_shares_with_correction, secure_sum, PairwiseStreams, RingVector, SecretVector, ShareMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

/// Integer secrets with `f = 0`: reconstruction equals the plaintext sum.
pub fn exactness_trial(r: &mut ChaCha8Rng, round: u64) -> bool {
    let m = r.gen_range(2..=64);
    let width = r.gen_range(1..=6);
    let secrets: Vec<SecretVector> = (0..m)
        .map(|i| SecretVector {
            owner: i,
            values: (0..width).map(|_| r.gen_range(-(1i64 << 40)..(1i64 << 40)) as f64).collect(),
            frac_bits: 0,
        })
        .collect();
    let streams = PairwiseStreams { master_seed: r.gen() };
    let (sum, _) = secure_sum(&secrets, streams, round, None).unwrap();
    let plain: Vec<i64> = (0..width).map(|c| secrets.iter().map(|s| s.values[c] as i64).sum()).collect();
    sum.to_signed() == plain
}

pub fn scalar_store(n: usize) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert("user.g", Tensor::zeros(&[n])).unwrap();
    p
}

/// Random weighted updates aggregated at `f = 24`; returns the largest
/// per-element error against the plaintext weighted mean and the bound
/// `M · 2^-25`.
pub fn fixed_point_trial(r: &mut ChaCha8Rng, round: u64) -> (f64, f64) {
    let m = r.gen_range(2..=32);
    let (n_user, n_news, d) = (r.gen_range(1..=5), r.gen_range(0..=3), r.gen_range(1..=3));
    let updates: Vec<ClientUpdate> = (0..m)
        .map(|i| {
            let weight = r.gen_range(1..=40);
            let w = weight as f64;
            let mut g_user = scalar_store(n_user);
            g_user.set("user.g", Tensor::vector((0..n_user).map(|_| w * r.gen_range(-2.0..2.0)).collect())).unwrap();
            let g_news =
                (0..n_news).map(|_| Tensor::vector((0..d).map(|_| w * r.gen_range(-2.0..2.0)).collect())).collect();
            ClientUpdate { user_id: format!("u{i}"), g_user, g_news, weight, loss: 0.0 }
        })
        .collect();
    let streams = PairwiseStreams { master_seed: r.gen() };
    let agg = aggregate_gradients(&updates, &scalar_store(n_user), d, 24, streams, round, &vec![false; m], None)
        .unwrap()
        .unwrap();
    let total: f64 = updates.iter().map(|u| u.weight as f64).sum();
    assert_eq!(agg.total_weight, total);
    let flat: Vec<Vec<f64>> = updates.iter().map(|u| u.flatten()).collect();
    let width = flat[0].len() - 1;
    let got: Vec<f64> = agg.g_user.flatten().into_iter().chain(agg.g_news.iter().flat_map(|t| t.data().to_vec())).collect();
    assert_eq!(got.len(), width);
    let mut worst = 0.0f64;
    for c in 0..width {
        let plain = flat.iter().map(|v| v[c]).sum::<f64>() / total;
        worst = worst.max((got[c] - plain).abs());
    }
    (worst, m as f64 * 2f64.powi(-25))
}

fn ring(r: &mut ChaCha8Rng, width: usize) -> RingVector {
    RingVector((0..width).map(|_| r.gen()).collect())
}

/// Two different secrets under matched generators: the random rows agree
/// bit for bit, for the default layout and the per-pair streams.
pub fn shares_match_trial(r: &mut ChaCha8Rng) -> bool {
    let m = r.gen_range(2..=16);
    let width = r.gen_range(1..=8);
    let (a, b) = (ring(r, width), ring(r, width));
    let seed: u64 = r.gen();
    let ha = fednews::secure_agg::make_shares(&a, m, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
    let hb = fednews::secure_agg::make_shares(&b, m, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
    let streams = PairwiseStreams { master_seed: seed };
    let sa = streams.make_shares(&a, m, 3, 1).unwrap();
    let sb = streams.make_shares(&b, m, 3, 1).unwrap();
    a != b
        && ha.rows[..m - 1] == hb.rows[..m - 1]
        && sa.rows[..m - 1] == sb.rows[..m - 1]
        && ha.column_sum() == a
        && hb.column_sum() == b
        && sa.column_sum() == a
}

fn column_sums(matrices: &[ShareMatrix], holders: &[usize]) -> Vec<RingVector> {
    holders
        .iter()
        .map(|&j| {
            let mut acc = RingVector::zeros(matrices[0].width());
            matrices.iter().for_each(|h| acc.add_assign(&h.rows[j]));
            acc
        })
        .collect()
}

/// Any strict subset of the `V_j` is the same for two unrelated groups of
/// secrets when each participant's correction row lands outside the subset
/// and the random rows share generators. Since the correction position does
/// not change the joint law of the rows, the subset carries no information.
pub fn subset_trial(r: &mut ChaCha8Rng) -> bool {
    let m = r.gen_range(2..=12);
    let width = r.gen_range(1..=6);
    let subset: Vec<usize> = {
        let mut s: Vec<usize> = (0..m).filter(|_| r.gen_bool(0.5)).collect();
        if s.len() == m {
            s.pop();
        }
        s
    };
    let outside = (0..m).find(|j| !subset.contains(j)).unwrap();
    let seeds: Vec<u64> = (0..m).map(|_| r.gen()).collect();
    let group = |r: &mut ChaCha8Rng| -> Vec<ShareMatrix> {
        seeds
            .iter()
            .map(|&s| {
                let secret = ring(r, width);
                make_shares_with_correction(&secret, m, outside, &mut ChaCha20Rng::seed_from_u64(s)).unwrap()
            })
            .collect()
    };
    let (ga, gb) = (group(r), group(r));
    column_sums(&ga, &subset) == column_sums(&gb, &subset)
        && column_sums(&ga, &[outside]) != column_sums(&gb, &[outside])
}
