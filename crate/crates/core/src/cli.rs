//! `fednews` command line: synthetic generation, training, evaluation and
//! sweeps.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::data::{generate_synthetic_dataset, load_dataset, write_dataset, Dataset, LoadOptions, SyntheticSpec};
use crate::data::{DEFAULT_MIN_WORD_FREQ, MAX_TITLE_LEN};
use crate::error::{Error, Result};
use crate::federated::checkpoint::{load_checkpoint, save_checkpoint};
use crate::federated::run::{nadam_from, run_simulation, write_round_log_to};
use crate::federated::{centralized_train, RoundRecord, Simulation, TrainOutcome};
use crate::model::evaluate_with;
use crate::news::tokenize_title;
use crate::ranking::MetricsReport;

pub const SEED_ENV: &str = "FEDNEWS_SEED";

#[derive(Debug, Parser)]
#[command(name = "fednews", version, about = "Federated multimodal news recommendation simulator")]
pub struct Cli {
    /// Worker threads (defaults to the config value, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset described by a JSON spec.
    GenSynth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score the test split of a dataset with a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics CSV path (default: `<ckpt>/eval.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per value of one config axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[value(name = "group_size")]
    GroupSize,
    #[value(name = "short_window")]
    ShortWindow,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::GroupSize => "group_size",
            SweepAxis::ShortWindow => "short_window",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: usize) {
        match self {
            SweepAxis::GroupSize => cfg.train.group_size = value,
            SweepAxis::ShortWindow => cfg.model.short_window = value,
        }
    }
}

/// 2 for configuration problems, 3 for data problems, 4 for protocol
/// failures, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parameter(_) | Error::Json(_) => 2,
        Error::Io(_) | Error::Csv(_) | Error::Format { .. } | Error::MissingRepr(_) | Error::ColdStart(_) => 3,
        Error::Protocol(_) | Error::Dropout(_) | Error::Consistency(_) | Error::Encoding { .. } => 4,
        _ => 1,
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

/// Reads, seeds (from the environment override) and validates a run config.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_json(&read_text(path)?)?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.train.seed = seed.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={seed} is not a u64")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match (&cfg.data.dir, &cfg.data.synthetic) {
        (_, Some(spec)) => generate_synthetic_dataset(spec)?.dataset,
        (Some(dir), None) => {
            let opts = LoadOptions {
                min_word_freq: cfg.data.min_word_freq.unwrap_or(DEFAULT_MIN_WORD_FREQ),
                reverse_history: cfg.data.reverse_history,
            };
            let (ds, report) = load_dataset(dir, &opts)?;
            log::info!("loaded {}: {report:?}", dir.display());
            ds
        }
        (None, None) => return Err(Error::Config("data.dir or data.synthetic is required".into())),
    };
    if let Some(w) = ds.image_width() {
        if w != cfg.model.d_img {
            return Err(Error::Config(format!("image features have width {w} but model.d_img is {}", cfg.model.d_img)));
        }
    }
    Ok(ds)
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("fednews-out"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(report)?;
    w.flush()?;
    Ok(())
}

fn print_report(label: &str, r: &MetricsReport) {
    println!(
        "{label}: auc={:.4} mrr={:.4} ndcg5={:.4} ndcg10={:.4} impressions={}",
        r.auc, r.mrr, r.ndcg5, r.ndcg10, r.n_impressions
    );
}

/// Runs one training job and writes `config.json`, `rounds.csv`,
/// `report.json`, `report.csv` and `checkpoint/` under `out`.
pub fn train_into(cfg: &RunConfig, ds: &Dataset, out: &Path, resume: bool) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let ckpt = out.join("checkpoint");
    let log_path = out.join("rounds.csv");
    let append = resume && log_path.exists();
    let outcome = match cfg.train.mode {
        Mode::Federated => {
            let mut sim = if resume {
                let (server, _) = load_checkpoint(&ckpt, ds.catalog.clone(), Some(nadam_from(&cfg.train)))?;
                Simulation::with_server(ds, server, &cfg.train)?
            } else {
                Simulation::new(ds, &cfg.model, &cfg.train)?
            };
            run_simulation(&mut sim, |r| log_round(r))?
        }
        Mode::Centralized => {
            if resume {
                return Err(Error::Config("resume is only supported in federated mode".into()));
            }
            centralized_train(ds, &cfg.model, &cfg.train, |r| log_round(r))?
        }
    };
    let file = OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(&log_path)?;
    write_round_log_to(BufWriter::new(file), &outcome.records, !append)?;
    save_checkpoint(&ckpt, &outcome.server, &ds.vocab)?;
    write_json(&out.join("report.json"), &outcome.final_report)?;
    write_metrics_csv(&out.join("report.csv"), &outcome.final_report)?;
    Ok(outcome)
}

fn log_round(r: &RoundRecord) {
    if let Some(auc) = r.auc {
        log::info!("round {} auc {auc:.4} loss {:?}", r.round, r.loss);
    }
}

pub fn cmd_gen_synth(spec: &Path, out: &Path) -> Result<SyntheticSpec> {
    let spec: SyntheticSpec = serde_json::from_str(&read_text(spec)?).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    let syn = generate_synthetic_dataset(&spec)?;
    write_dataset(out, &syn.dataset)?;
    write_json(&out.join("spec.json"), &spec)?;
    println!("wrote {} news, {} users to {} (topic oracle auc {:.4})", syn.dataset.catalog.len(), syn.dataset.users.len(), out.display(), syn.oracle_auc);
    Ok(spec)
}

pub fn cmd_train(config: &Path, resume: bool) -> Result<TrainOutcome> {
    let cfg = load_run_config(config)?;
    let ds = load_data(&cfg)?;
    let out = output_dir(&cfg);
    let outcome = train_into(&cfg, &ds, &out, resume)?;
    print_report("test", &outcome.final_report);
    Ok(outcome)
}

pub fn cmd_eval(ckpt: &Path, data: &Path, out: Option<&Path>) -> Result<MetricsReport> {
    let (mut ds, _) = load_dataset(data, &LoadOptions::default())?;
    let meta_path = ckpt.join(crate::federated::checkpoint::META_FILE);
    let meta: crate::federated::checkpoint::CheckpointMeta = serde_json::from_reader(BufReader::new(
        File::open(&meta_path).map_err(|e| Error::Config(format!("cannot open {}: {e}", meta_path.display())))?,
    ))?;
    // Token ids must come from the training vocabulary.
    for n in ds.catalog.values_mut() {
        n.title_tokens = tokenize_title(&n.title, &meta.vocab, MAX_TITLE_LEN.min(meta.model.max_title_len));
    }
    let (server, _) = load_checkpoint(ckpt, ds.catalog.clone(), None)?;
    let report = evaluate_with(&server.news_reprs, &server.model.user, &server.model.config, &ds.users, &ds.test)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| ckpt.join("eval.csv"));
    write_metrics_csv(&path, &report)?;
    print_report("eval", &report);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: usize,
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub rounds: usize,
    pub bytes_per_round: f64,
    pub wall_ms: u64,
}

pub fn cmd_sweep(config: &Path, axis: SweepAxis, values: &[usize]) -> Result<Vec<SweepRow>> {
    let base = load_run_config(config)?;
    let ds = load_data(&base)?;
    let out = output_dir(&base);
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        axis.apply(&mut cfg, value);
        cfg.validate()?;
        let outcome = train_into(&cfg, &ds, &out.join(format!("{}_{value}", axis.name())), false)?;
        let trained: Vec<&RoundRecord> = outcome.records.iter().filter(|r| r.group_size > 0).collect();
        let bytes_per_round = if trained.is_empty() {
            0.0
        } else {
            trained.iter().map(|r| r.total_bytes() as f64).sum::<f64>() / trained.len() as f64
        };
        let r = outcome.final_report;
        rows.push(SweepRow {
            axis: axis.name(),
            value,
            auc: r.auc,
            mrr: r.mrr,
            ndcg5: r.ndcg5,
            ndcg10: r.ndcg10,
            rounds: trained.len(),
            bytes_per_round,
            wall_ms: outcome.records.iter().map(|r| r.wall_ms).sum(),
        });
        print_report(&format!("{}={value}", axis.name()), &r);
    }
    std::fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_path(out.join(format!("sweep_{}.csv", axis.name())))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
}

fn config_threads(path: &Path) -> Option<usize> {
    RunConfig::from_json(&read_text(path).ok()?).ok()?.train.threads
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { config, .. } | Command::Sweep { config, .. } => {
            configure_threads(cli.threads.or_else(|| config_threads(config)))
        }
        _ => configure_threads(cli.threads),
    }
    match cli.command {
        Command::GenSynth { spec, out } => cmd_gen_synth(&spec, &out).map(|_| ()),
        Command::Train { config, resume } => cmd_train(&config, resume).map(|_| ()),
        Command::Eval { ckpt, data, out } => cmd_eval(&ckpt, &data, out.as_deref()).map(|_| ()),
        Command::Sweep { config, axis, values } => cmd_sweep(&config, axis, &values).map(|_| ()),
    }
}
