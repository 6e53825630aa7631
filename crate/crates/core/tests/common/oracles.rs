//! Independent reference implementations written from the definitions, with
//! plain loops and no shared code with the crate.

use fednews::nn::{ParamStore, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Brute {
    pub auc: Option<f64>,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

/// 1-based rank: items with a higher score, or an equal score and a lower
/// index, come first.
fn rank(scores: &[f64], i: usize) -> usize {
    1 + (0..scores.len()).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count()
}

fn ndcg(scores: &[f64], labels: &[bool], k: usize) -> f64 {
    let n = scores.len();
    let mut by_rank = vec![0.0; n];
    for i in 0..n {
        by_rank[rank(scores, i) - 1] = if labels[i] { 1.0 } else { 0.0 };
    }
    let mut dcg = 0.0;
    for (r, &gain) in by_rank.iter().enumerate().take(k) {
        dcg += gain / ((r + 2) as f64).log2();
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let mut idcg = 0.0;
    for r in 0..n.min(k) {
        idcg += if r < n_pos { 1.0 } else { 0.0 } / ((r + 2) as f64).log2();
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

pub fn brute_metrics(scores: &[f64], labels: &[bool]) -> Brute {
    let mut pairs = 0.0;
    let mut good = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    good += 1.0;
                } else if scores[i] == scores[j] {
                    good += 0.5;
                }
            }
        }
    }
    let first = (0..scores.len()).filter(|&i| labels[i]).map(|i| rank(scores, i)).min();
    Brute {
        auc: if pairs > 0.0 { Some(good / pairs) } else { None },
        mrr: first.map_or(0.0, |r| 1.0 / r as f64),
        ndcg5: ndcg(scores, labels, 5),
        ndcg10: ndcg(scores, labels, 10),
    }
}

/// A random impression with deliberately frequent score ties.
pub fn random_impression(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = r.gen_range(2..=25);
    let levels = r.gen_range(2..=12);
    let scores = (0..n).map(|_| r.gen_range(0..levels) as f64 * 0.37 - 1.0).collect();
    let p = r.gen_range(0.05..0.6);
    let labels = (0..n).map(|_| r.gen_bool(p)).collect();
    (scores, labels)
}

fn at(t: &Tensor, i: usize, j: usize) -> f64 {
    t.data()[i * t.shape()[1] + j]
}

fn project_rows(x: &[Vec<f64>], w: &Tensor) -> Vec<Vec<f64>> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| (0..dout).map(|o| (0..din).map(|i| row[i] * at(w, i, o)).sum()).collect())
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// `concat_h softmax(Q_h K_hᵀ / √d_h) V_h · W_o + b_o` with explicit loops.
pub fn mhsa_literal(x: &[Vec<f64>], p: &ParamStore, prefix: &str, heads: usize) -> Vec<Vec<f64>> {
    let get = |n: &str| p.get(&format!("{prefix}.{n}")).unwrap().clone();
    let (q, k, v) = (project_rows(x, &get("wq")), project_rows(x, &get("wk")), project_rows(x, &get("wv")));
    let d = q[0].len();
    let dh = d / heads;
    let len = x.len();
    let mut cat = vec![vec![0.0; d]; len];
    for h in 0..heads {
        for i in 0..len {
            let scores: Vec<f64> = (0..len)
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let a = softmax(&scores);
            for c in 0..dh {
                cat[i][h * dh + c] = (0..len).map(|j| a[j] * v[j][h * dh + c]).sum();
            }
        }
    }
    let bo = get("bo");
    project_rows(&cat, &get("wo"))
        .into_iter()
        .map(|row| row.iter().zip(bo.data()).map(|(a, b)| a + b).collect())
        .collect()
}

/// `Σ_i softmax_i(qᵀ tanh(W x_i + b)) x_i`.
pub fn additive_literal(x: &[Vec<f64>], p: &ParamStore, prefix: &str) -> Vec<f64> {
    let w = p.get(&format!("{prefix}.w")).unwrap();
    let b = p.get(&format!("{prefix}.b")).unwrap();
    let q = p.get(&format!("{prefix}.q")).unwrap();
    let hidden = project_rows(x, w);
    let scores: Vec<f64> = hidden
        .iter()
        .map(|h| h.iter().zip(b.data()).zip(q.data()).map(|((hv, bv), qv)| qv * (hv + bv).tanh()).sum())
        .collect();
    let a = softmax(&scores);
    (0..x[0].len()).map(|c| (0..x.len()).map(|i| a[i] * x[i][c]).sum()).collect()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}
