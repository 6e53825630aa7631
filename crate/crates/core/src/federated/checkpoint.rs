//! Server checkpoints: a tensor file with both models and optimizer moments,
//! plus a JSON sidecar with step counters, model config and vocabulary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::server::ServerState;
use crate::config::ModelConfig;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::news::NewsContent;
use crate::nn::checkpoint::{read_tensors, write_tensors};
use crate::nn::{NadamConfig, OptimizerState, ParamStore, Tensor};

pub const TENSOR_FILE: &str = "params.bin";
pub const META_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub round: u64,
    pub news_step: u64,
    pub user_step: u64,
    pub nadam: NadamConfig,
    pub model: ModelConfig,
    pub vocab: Vocab,
}

fn put_moments(out: &mut BTreeMap<String, Tensor>, tag: &str, opt: &OptimizerState) {
    for (k, t) in &opt.m {
        out.insert(format!("opt.{tag}.m/{k}"), t.clone());
    }
    for (k, t) in &opt.v {
        out.insert(format!("opt.{tag}.v/{k}"), t.clone());
    }
}

fn take_moments(
    tensors: &BTreeMap<String, Tensor>,
    tag: &str,
    params: &ParamStore,
    config: NadamConfig,
    step: u64,
) -> Result<OptimizerState> {
    let mut opt = OptimizerState::new(config, params);
    opt.step = step;
    for (which, slot) in [("m", &mut opt.m), ("v", &mut opt.v)] {
        for (k, t) in slot.iter_mut() {
            let key = format!("opt.{tag}.{which}/{k}");
            let stored = tensors.get(&key).ok_or_else(|| Error::Config(format!("checkpoint lacks {key}")))?;
            if stored.shape() != t.shape() {
                return Err(Error::Config(format!("checkpoint tensor {key} has the wrong shape")));
            }
            *t = stored.clone();
        }
    }
    Ok(opt)
}

pub fn save_checkpoint(dir: &Path, server: &ServerState, vocab: &Vocab) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tensors = BTreeMap::new();
    for (k, t) in server.model.news.iter().chain(server.model.user.iter()) {
        tensors.insert(k.clone(), t.clone());
    }
    put_moments(&mut tensors, "news", &server.news_opt);
    put_moments(&mut tensors, "user", &server.user_opt);
    write_tensors(BufWriter::new(File::create(dir.join(TENSOR_FILE))?), &tensors)?;
    let meta = CheckpointMeta {
        round: server.round,
        news_step: server.news_opt.step,
        user_step: server.user_opt.step,
        nadam: server.user_opt.config,
        model: server.model.config.clone(),
        vocab: vocab.clone(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(META_FILE))?), &meta)?;
    Ok(())
}

/// Restores a server over `catalog`; representations are re-encoded.
/// `nadam` overrides the stored optimizer settings when given.
pub fn load_checkpoint(
    dir: &Path,
    catalog: BTreeMap<String, NewsContent>,
    nadam: Option<NadamConfig>,
) -> Result<(ServerState, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_reader(BufReader::new(File::open(dir.join(META_FILE))?))?;
    let tensors = read_tensors(BufReader::new(File::open(dir.join(TENSOR_FILE))?))?;
    let vocab_size = meta.vocab.len();
    let mut model = Model::init(&meta.model, vocab_size, 0)?;
    for store in [&mut model.news, &mut model.user] {
        let keys: Vec<String> = store.keys().cloned().collect();
        for k in keys {
            let t = tensors.get(&k).ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {k}")))?;
            store.set(&k, t.clone())?;
        }
    }
    let config = nadam.unwrap_or(meta.nadam);
    let news_opt = take_moments(&tensors, "news", &model.news, config, meta.news_step)?;
    let user_opt = take_moments(&tensors, "user", &model.user, config, meta.user_step)?;
    let mut server = ServerState::new(model, catalog, config)?;
    server.news_opt = news_opt;
    server.user_opt = user_opt;
    server.round = meta.round;
    Ok((server, meta))
}
