//! Planted-preference synthetic datasets.
//!
//! Every news item has a latent topic. Its title draws words from a
//! topic-specific word list and its image feature sits near a topic
//! prototype; each modality is informative for a given item with a
//! probability proportional to its share of the topic signal (`1 − λ` for
//! text, `λ` for images), and pure noise otherwise. Users hold a preference
//! vector over topics (optionally re-drawn in the second half of their
//! history) and click a shown item with probability `σ(β · p_u[topic])`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LoadReport, HISTORY_CAP};
use crate::error::{Error, Result};
use crate::news::NewsContent;
use crate::ranking::{evaluate_ranking, Impression, MetricsReport};
use crate::user::ClickHistory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_news: usize,
    pub n_topics: usize,
    pub d_img: usize,
    pub clicks_min: usize,
    pub clicks_max: usize,
    pub train_impressions_per_user: usize,
    pub val_impressions_per_user: usize,
    pub test_impressions_per_user: usize,
    /// Negatives per impression.
    pub k: usize,
    /// Probability that a user's preferences change partway through the history.
    pub drift_rate: f64,
    /// λ: image share of the topic signal.
    pub modality_mix: f64,
    /// Probability that a modality carrying the full signal is informative for an item.
    pub informative_rate: f64,
    /// Click sharpness β.
    pub beta: f64,
    pub title_len_min: usize,
    pub title_len_max: usize,
    pub words_per_topic: usize,
    pub generic_words: usize,
    /// Share of topic words in an informative title.
    pub topic_word_rate: f64,
    pub image_noise: f64,
    pub min_word_freq: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 50,
            n_news: 200,
            n_topics: 8,
            d_img: 16,
            clicks_min: 24,
            clicks_max: 40,
            train_impressions_per_user: 12,
            val_impressions_per_user: 0,
            test_impressions_per_user: 6,
            k: 4,
            drift_rate: 0.0,
            modality_mix: 0.5,
            informative_rate: 0.75,
            beta: 6.0,
            title_len_min: 4,
            title_len_max: 10,
            words_per_topic: 12,
            generic_words: 40,
            topic_word_rate: 0.7,
            image_noise: 0.35,
            min_word_freq: super::DEFAULT_MIN_WORD_FREQ,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_users", self.n_users),
            ("n_news", self.n_news),
            ("n_topics", self.n_topics),
            ("d_img", self.d_img),
            ("clicks_min", self.clicks_min),
            ("test_impressions_per_user", self.test_impressions_per_user),
            ("k", self.k),
            ("title_len_min", self.title_len_min),
            ("words_per_topic", self.words_per_topic),
            ("generic_words", self.generic_words),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Parameter(format!("synthetic.{name} must be positive")));
            }
        }
        if self.n_topics < 2 {
            return Err(Error::Parameter("synthetic.n_topics must be at least 2".into()));
        }
        if self.clicks_max < self.clicks_min || self.clicks_max > HISTORY_CAP {
            return Err(Error::Parameter(format!(
                "synthetic clicks range must satisfy clicks_min ≤ clicks_max ≤ {HISTORY_CAP}"
            )));
        }
        if self.title_len_max < self.title_len_min || self.title_len_max > super::MAX_TITLE_LEN {
            return Err(Error::Parameter("synthetic title length range is invalid".into()));
        }
        if self.k >= self.n_news {
            return Err(Error::Parameter(format!("K = {} must be smaller than n_news = {}", self.k, self.n_news)));
        }
        for (name, v) in [
            ("modality_mix", self.modality_mix),
            ("drift_rate", self.drift_rate),
            ("informative_rate", self.informative_rate),
            ("topic_word_rate", self.topic_word_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("synthetic.{name} must be in [0, 1]")));
            }
        }
        if !(self.beta > 0.0) || !(self.image_noise >= 0.0) {
            return Err(Error::Parameter("synthetic.beta must be positive and image_noise non-negative".into()));
        }
        Ok(())
    }
}

/// Generated dataset plus the ground truth the generator planted.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub topic_of: BTreeMap<String, usize>,
    /// Preference in force for impressions (after any drift).
    pub preferences: BTreeMap<String, Vec<f64>>,
    /// Test AUC of a logistic-regression oracle on ground-truth topics.
    pub oracle_auc: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn unit_gaussian<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// One or two favourite topics score in `[0.5, 1]`, the rest in `[−1, −0.5]`.
fn draw_preference<R: Rng>(rng: &mut R, n_topics: usize, avoid: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let n_fav = if rng.gen_bool(0.5) { 1 } else { 2 };
    let mut pool: Vec<usize> = (0..n_topics).filter(|t| !avoid.contains(t)).collect();
    if pool.len() < n_fav {
        pool = (0..n_topics).collect();
    }
    pool.shuffle(rng);
    let favs: Vec<usize> = pool[..n_fav].to_vec();
    let pref = (0..n_topics)
        .map(|t| if favs.contains(&t) { rng.gen_range(0.5..=1.0) } else { rng.gen_range(-1.0..=-0.5) })
        .collect();
    (pref, favs)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t = spec.n_topics;
    let lambda = spec.modality_mix;
    let text_informative = (2.0 * (1.0 - lambda)).min(1.0) * spec.informative_rate;
    let image_informative = (2.0 * lambda).min(1.0) * spec.informative_rate;

    let prototypes: Vec<Vec<f64>> = (0..t).map(|_| unit_gaussian(&mut rng, spec.d_img)).collect();
    let topic_word = |topic: usize, i: usize| format!("t{topic}w{i}");
    let generic_word = |i: usize| format!("g{i}");

    let width = spec.n_news.to_string().len();
    let mut catalog = BTreeMap::new();
    let mut topic_of = BTreeMap::new();
    let mut ids = Vec::with_capacity(spec.n_news);
    for n in 0..spec.n_news {
        let id = format!("N{:0width$}", n + 1);
        let topic = rng.gen_range(0..t);
        let len = rng.gen_range(spec.title_len_min..=spec.title_len_max);
        let text_ok = rng.gen_bool(text_informative);
        let words: Vec<String> = (0..len)
            .map(|_| {
                if text_ok && rng.gen_bool(spec.topic_word_rate) {
                    topic_word(topic, rng.gen_range(0..spec.words_per_topic))
                } else {
                    generic_word(rng.gen_range(0..spec.generic_words))
                }
            })
            .collect();
        let image_ok = rng.gen_bool(image_informative);
        let noise = unit_gaussian(&mut rng, spec.d_img);
        let feature: Vec<f64> = if image_ok {
            prototypes[topic].iter().zip(&noise).map(|(p, e)| round4(p + spec.image_noise * e)).collect()
        } else {
            noise.iter().map(|e| round4(*e)).collect()
        };
        catalog.insert(
            id.clone(),
            NewsContent {
                news_id: id.clone(),
                category: Some(format!("topic{topic}")),
                title: words.join(" "),
                title_tokens: Vec::new(),
                image_feature: Some(feature),
            },
        );
        topic_of.insert(id.clone(), topic);
        ids.push(id);
    }

    let mut users = BTreeMap::new();
    let mut preferences = BTreeMap::new();
    let mut splits: [Vec<Impression>; 3] = Default::default();
    let mut imp_counter = 0usize;
    let uwidth = spec.n_users.to_string().len();

    let click = |rng: &mut ChaCha8Rng, pref: &[f64], id: &str| rng.gen_bool(sigmoid(spec.beta * pref[topic_of[id]]));

    for u in 0..spec.n_users {
        let user_id = format!("U{:0uwidth$}", u + 1);
        let n_clicks = rng.gen_range(spec.clicks_min..=spec.clicks_max);
        let (mut pref, favs) = draw_preference(&mut rng, t, &[]);
        let drift_at = if rng.gen_bool(spec.drift_rate) {
            Some(rng.gen_range(n_clicks / 2..=3 * n_clicks / 4))
        } else {
            None
        };

        let mut clicked: Vec<String> = Vec::with_capacity(n_clicks);
        let mut seen = BTreeSet::new();
        for step in 0..n_clicks {
            if drift_at == Some(step) {
                pref = draw_preference(&mut rng, t, &favs).0;
            }
            let mut attempts = 0;
            loop {
                let id = &ids[rng.gen_range(0..ids.len())];
                attempts += 1;
                let fresh = !seen.contains(id) || attempts > 500;
                if fresh && click(&mut rng, &pref, id) {
                    seen.insert(id.clone());
                    clicked.push(id.clone());
                    break;
                }
            }
        }
        users.insert(user_id.clone(), ClickHistory { user_id: user_id.clone(), clicked });

        let counts = [
            spec.train_impressions_per_user,
            spec.val_impressions_per_user,
            spec.test_impressions_per_user,
        ];
        for (split, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                imp_counter += 1;
                let positive = loop {
                    let id = &ids[rng.gen_range(0..ids.len())];
                    if click(&mut rng, &pref, id) {
                        break id.clone();
                    }
                };
                let mut chosen = BTreeSet::from([positive.clone()]);
                let mut cands = vec![(positive, true)];
                while cands.len() < spec.k + 1 {
                    let id = &ids[rng.gen_range(0..ids.len())];
                    if chosen.contains(id) {
                        continue;
                    }
                    if !click(&mut rng, &pref, id) {
                        chosen.insert(id.clone());
                        cands.push((id.clone(), false));
                    }
                }
                cands.shuffle(&mut rng);
                let (day, hour, minute, sec) =
                    (rng.gen_range(9..=15), rng.gen_range(1..=12), rng.gen_range(0..60), rng.gen_range(0..60));
                let half = if rng.gen_bool(0.5) { "AM" } else { "PM" };
                splits[split].push(Impression {
                    impression_id: imp_counter.to_string(),
                    user_id: user_id.clone(),
                    timestamp: format!("11/{day}/2019 {hour}:{minute:02}:{sec:02} {half}"),
                    candidates: cands,
                });
            }
        }
        preferences.insert(user_id, pref);
    }

    let mut report = LoadReport::default();
    let dataset = Dataset::assemble(catalog, users, splits, spec.min_word_freq, &mut report);
    let oracle_auc = topic_oracle_auc(&dataset, &topic_of, t);
    Ok(SyntheticDataset { dataset, topic_of, preferences, oracle_auc })
}

/// Topic-share features of a candidate for a user: overall and recent
/// history fractions in the candidate's topic, plus a bias.
fn topic_features(history: &[String], topic_of: &BTreeMap<String, usize>, topic: usize) -> [f64; 3] {
    let frac = |h: &[String]| {
        if h.is_empty() {
            0.0
        } else {
            h.iter().filter(|id| topic_of.get(*id) == Some(&topic)).count() as f64 / h.len() as f64
        }
    };
    let recent = &history[history.len().saturating_sub(10)..];
    [frac(history), frac(recent), 1.0]
}

/// Logistic regression on ground-truth topic features, fit on the train
/// impressions and scored by mean test AUC.
pub fn topic_oracle_auc(ds: &Dataset, topic_of: &BTreeMap<String, usize>, _n_topics: usize) -> f64 {
    let empty = Vec::new();
    let features = |imp: &Impression, id: &str| {
        let hist = ds.users.get(&imp.user_id).map_or(&empty, |h| &h.clicked);
        topic_features(hist, topic_of, topic_of[id])
    };
    let mut rows: Vec<([f64; 3], f64)> = Vec::new();
    for imp in &ds.train {
        for (id, label) in &imp.candidates {
            rows.push((features(imp, id), if *label { 1.0 } else { 0.0 }));
        }
    }
    let mut w = [0.0; 3];
    if !rows.is_empty() {
        for _ in 0..300 {
            let mut grad = [0.0; 3];
            for (x, y) in &rows {
                let p = sigmoid(w.iter().zip(x).map(|(a, b)| a * b).sum());
                for j in 0..3 {
                    grad[j] += (p - y) * x[j];
                }
            }
            for j in 0..3 {
                w[j] -= 2.0 * grad[j] / rows.len() as f64;
            }
        }
    }
    let per: Vec<_> = ds
        .test
        .iter()
        .filter_map(|imp| {
            let scores: Vec<f64> = imp
                .candidates
                .iter()
                .map(|(id, _)| w.iter().zip(features(imp, id)).map(|(a, b)| a * b).sum())
                .collect();
            let labels: Vec<bool> = imp.candidates.iter().map(|c| c.1).collect();
            evaluate_ranking(&scores, &labels).ok()
        })
        .collect();
    MetricsReport::from_impressions(&per).auc
}
