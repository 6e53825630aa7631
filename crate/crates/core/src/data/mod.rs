//! Dataset ingestion (MIND-style TSV plus image-feature sidecar) and the
//! synthetic planted-preference generator.

pub mod mind;
pub mod synthetic;
pub mod vocab;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::Result;
use crate::news::{tokenize_title, NewsContent};
use crate::ranking::Impression;
use crate::user::ClickHistory;

pub use synthetic::{generate_synthetic_dataset, SyntheticDataset, SyntheticSpec};
pub use vocab::Vocab;

pub const DEFAULT_MIN_WORD_FREQ: usize = 2;
pub const MAX_TITLE_LEN: usize = 30;
pub const HISTORY_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub catalog: BTreeMap<String, NewsContent>,
    pub users: BTreeMap<String, ClickHistory>,
    pub train: Vec<Impression>,
    pub val: Vec<Impression>,
    pub test: Vec<Impression>,
    pub vocab: Vocab,
}

/// Counts gathered while loading and cleaning a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub malformed_news: usize,
    pub duplicate_news: usize,
    pub malformed_behaviors: usize,
    pub dangling_history: usize,
    pub dangling_candidates: usize,
    pub dropped_impressions: usize,
    pub features_loaded: usize,
}

impl Dataset {
    /// Builds the vocabulary, tokenizes titles, and prunes ids that do not
    /// resolve in the catalog.
    pub fn assemble(
        mut catalog: BTreeMap<String, NewsContent>,
        mut users: BTreeMap<String, ClickHistory>,
        splits: [Vec<Impression>; 3],
        min_word_freq: usize,
        report: &mut LoadReport,
    ) -> Dataset {
        let vocab = Vocab::build(catalog.values().map(|n| n.title.as_str()), min_word_freq);
        for n in catalog.values_mut() {
            n.title_tokens = tokenize_title(&n.title, &vocab, MAX_TITLE_LEN);
        }
        for h in users.values_mut() {
            let before = h.clicked.len();
            h.clicked.retain(|id| catalog.contains_key(id));
            report.dangling_history += before - h.clicked.len();
        }
        let [train, val, test] = splits.map(|imps| {
            imps.into_iter()
                .filter_map(|mut imp| {
                    let before = imp.candidates.len();
                    imp.candidates.retain(|(id, _)| catalog.contains_key(id));
                    report.dangling_candidates += before - imp.candidates.len();
                    if imp.candidates.is_empty() {
                        report.dropped_impressions += 1;
                        None
                    } else {
                        Some(imp)
                    }
                })
                .collect::<Vec<_>>()
        });
        Dataset { catalog, users, train, val, test, vocab }
    }

    /// Catalog ids in index order (the order used by membership vectors).
    pub fn news_ids(&self) -> Vec<String> {
        self.catalog.keys().cloned().collect()
    }

    pub fn news_index(&self) -> HashMap<String, usize> {
        self.catalog.keys().enumerate().map(|(i, k)| (k.clone(), i)).collect()
    }

    pub fn image_width(&self) -> Option<usize> {
        self.catalog.values().find_map(|n| n.image_feature.as_ref().map(Vec::len))
    }
}

pub struct LoadOptions {
    pub min_word_freq: usize,
    pub reverse_history: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { min_word_freq: DEFAULT_MIN_WORD_FREQ, reverse_history: false }
    }
}

fn reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Reads `dir/news.tsv`, optional `dir/features.tsv`, and
/// `dir/{train,val,test}/behaviors.tsv` (missing splits are empty).
pub fn load_dataset(dir: &Path, opts: &LoadOptions) -> Result<(Dataset, LoadReport)> {
    let mut report = LoadReport::default();
    let news = mind::parse_news_tsv(reader(&dir.join("news.tsv"))?)?;
    report.malformed_news = news.malformed;
    report.duplicate_news = news.duplicates;
    let mut catalog = news.entries;

    let features_path = dir.join("features.tsv");
    if features_path.exists() {
        for (id, f) in mind::load_image_features(reader(&features_path)?)? {
            if let Some(n) = catalog.get_mut(&id) {
                n.image_feature = Some(f);
                report.features_loaded += 1;
            }
        }
    }

    let mut users = BTreeMap::new();
    let mut splits: [Vec<Impression>; 3] = Default::default();
    for (slot, name) in splits.iter_mut().zip(["train", "val", "test"]) {
        let path = dir.join(name).join("behaviors.tsv");
        if !path.exists() {
            continue;
        }
        let parsed = mind::parse_behaviors_tsv(reader(&path)?, HISTORY_CAP, opts.reverse_history)?;
        report.malformed_behaviors += parsed.malformed;
        users.extend(parsed.histories);
        *slot = parsed.impressions;
    }
    let ds = Dataset::assemble(catalog, users, splits, opts.min_word_freq, &mut report);
    Ok((ds, report))
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    mind::write_news_tsv(BufWriter::new(File::create(dir.join("news.tsv"))?), &ds.catalog)?;
    mind::write_features_tsv(BufWriter::new(File::create(dir.join("features.tsv"))?), &ds.catalog)?;
    for (imps, name) in [(&ds.train, "train"), (&ds.val, "val"), (&ds.test, "test")] {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub)?;
        mind::write_behaviors_tsv(BufWriter::new(File::create(sub.join("behaviors.tsv"))?), imps, &ds.users)?;
    }
    Ok(())
}
