//! Run configuration. Every field has a documented default; a JSON config
//! only needs to name what it overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Both,
    TextOnly,
    ImageOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UserMode {
    #[default]
    LongShort,
    LongOnly,
    ShortOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// News/user representation width.
    pub d: usize,
    pub heads: usize,
    pub word_dim: usize,
    /// Self-attention layers in the text encoder.
    pub text_layers: usize,
    /// Hidden width of additive attention.
    pub att_hidden: usize,
    pub d_img: usize,
    pub max_title_len: usize,
    /// Long-term history cap.
    pub n_long: usize,
    /// Short-term window (most recent clicks).
    pub short_window: usize,
    pub modality: Modality,
    pub user_mode: UserMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 400,
            heads: 8,
            word_dim: 300,
            text_layers: 1,
            att_hidden: 200,
            d_img: 64,
            max_title_len: 30,
            n_long: 50,
            short_window: 20,
            modality: Modality::Both,
            user_mode: UserMode::LongShort,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("heads", self.heads),
            ("word_dim", self.word_dim),
            ("text_layers", self.text_layers),
            ("att_hidden", self.att_hidden),
            ("d_img", self.d_img),
            ("max_title_len", self.max_title_len),
            ("n_long", self.n_long),
            ("short_window", self.short_window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!("model.heads ({}) must divide model.d ({})", self.heads, self.d)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Federated,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Samples per centralized step.
    pub batch_size: usize,
    /// Negatives per clicked news.
    pub k_neg: usize,
    pub group_size: usize,
    pub max_rounds: usize,
    /// Client-side clip threshold; `null` disables clipping.
    pub clip_delta: Option<f64>,
    /// Fixed-point fraction bits for gradient aggregation.
    pub frac_bits: u32,
    pub eval_interval: usize,
    /// Stop when test AUC improves by less than `tol` over this many evaluations.
    pub patience: Option<usize>,
    pub tol: f64,
    /// Rounds between full-catalog representation refreshes.
    pub catalog_refresh: usize,
    pub retry_budget: usize,
    /// Per-client probability of dropping out of a round (simulation).
    pub dropout_prob: f64,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Federated,
            lr: 6e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 256,
            k_neg: 20,
            group_size: 200,
            max_rounds: 100,
            clip_delta: Some(1.0),
            frac_bits: 24,
            eval_interval: 10,
            patience: None,
            tol: 1e-3,
            catalog_refresh: 10,
            retry_budget: 3,
            dropout_prob: 0.0,
            seed: 42,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("train.lr must be a non-negative number".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("train.beta1/beta2 must be in [0,1) and eps positive".into()));
        }
        if self.batch_size == 0 || self.k_neg == 0 || self.eval_interval == 0 || self.catalog_refresh == 0 {
            return Err(Error::Config(
                "train.batch_size, k_neg, eval_interval and catalog_refresh must be positive".into(),
            ));
        }
        if self.mode == Mode::Federated && self.group_size < 2 {
            return Err(Error::Config("train.group_size must be at least 2".into()));
        }
        if let Some(delta) = self.clip_delta {
            if !(delta > 0.0) {
                return Err(Error::Config("train.clip_delta must be positive".into()));
            }
        }
        if self.frac_bits > 40 {
            return Err(Error::Config("train.frac_bits must be at most 40".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::Config("train.dropout_prob must be in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with `news.tsv`, `features.tsv` and `{train,val,test}/behaviors.tsv`.
    pub dir: Option<PathBuf>,
    /// Generate data in memory instead of reading `dir`.
    pub synthetic: Option<SyntheticSpec>,
    /// Histories in the TSV are newest-first.
    pub reverse_history: bool,
    pub min_word_freq: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match (&self.data.dir, &self.data.synthetic) {
            (None, None) => Err(Error::Config("data.dir or data.synthetic is required".into())),
            (Some(_), Some(_)) => Err(Error::Config("data.dir and data.synthetic are exclusive".into())),
            (_, Some(spec)) => spec.validate(),
            _ => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}
