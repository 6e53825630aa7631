//! MIND-style TSV files.
//!
//! * `news.tsv`: id, category, subcategory, title, abstract, url,
//!   title_entities, abstract_entities
//! * `behaviors.tsv`: impression_id, user_id, time, history (space separated,
//!   oldest first), impressions (`newsid-0` / `newsid-1`, space separated)
//! * `features.tsv`: `news_id<TAB>f1,f2,…`
//!
//! News and behaviors parsers never fail on content: malformed rows are
//! skipped and counted.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::news::NewsContent;
use crate::ranking::Impression;
use crate::user::ClickHistory;

#[derive(Debug, Clone, Default)]
pub struct NewsParse {
    /// Token ids are left empty; they are assigned once a vocabulary exists.
    pub entries: BTreeMap<String, NewsContent>,
    pub malformed: usize,
    pub duplicates: usize,
}

fn lines<R: BufRead>(mut reader: R) -> Result<Vec<String>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = String::from_utf8_lossy(&bytes);
    Ok(text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect())
}

pub fn parse_news_tsv<R: BufRead>(reader: R) -> Result<NewsParse> {
    let mut out = NewsParse::default();
    for line in lines(reader)? {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 || cols[0].trim().is_empty() || cols[3].trim().is_empty() {
            out.malformed += 1;
            continue;
        }
        let id = cols[0].trim().to_string();
        let category = Some(cols[1].trim()).filter(|c| !c.is_empty()).map(str::to_string);
        let item = NewsContent {
            news_id: id.clone(),
            category,
            title: cols[3].to_string(),
            title_tokens: Vec::new(),
            image_feature: None,
        };
        if out.entries.insert(id.clone(), item).is_some() {
            out.duplicates += 1;
            log::warn!("duplicate news id {id}; keeping the last row");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct BehaviorsParse {
    pub impressions: Vec<Impression>,
    /// Latest history seen per user.
    pub histories: BTreeMap<String, ClickHistory>,
    pub malformed: usize,
}

fn parse_candidate(tok: &str) -> Option<(String, bool)> {
    let (id, label) = tok.rsplit_once('-')?;
    if id.is_empty() {
        return None;
    }
    match label {
        "1" => Some((id.to_string(), true)),
        "0" => Some((id.to_string(), false)),
        _ => None,
    }
}

/// Histories keep the `history_cap` most recent entries. With
/// `reverse_history` the history column is read as newest-first.
pub fn parse_behaviors_tsv<R: BufRead>(reader: R, history_cap: usize, reverse_history: bool) -> Result<BehaviorsParse> {
    let mut out = BehaviorsParse::default();
    for line in lines(reader)? {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 || cols[0].trim().is_empty() || cols[1].trim().is_empty() {
            out.malformed += 1;
            continue;
        }
        let candidates: Option<Vec<(String, bool)>> = cols[4].split_whitespace().map(parse_candidate).collect();
        let candidates = match candidates {
            Some(c) if !c.is_empty() => c,
            _ => {
                out.malformed += 1;
                continue;
            }
        };
        let mut history: Vec<String> = cols[3].split_whitespace().map(str::to_string).collect();
        if reverse_history {
            history.reverse();
        }
        let start = history.len().saturating_sub(history_cap);
        let user_id = cols[1].trim().to_string();
        out.histories.insert(
            user_id.clone(),
            ClickHistory { user_id: user_id.clone(), clicked: history[start..].to_vec() },
        );
        out.impressions.push(Impression {
            impression_id: cols[0].trim().to_string(),
            user_id,
            timestamp: cols[2].to_string(),
            candidates,
        });
    }
    Ok(out)
}

/// Feature vectors keyed by news id; every row must have the same width.
pub fn load_image_features<R: BufRead>(reader: R) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    let mut width = None;
    for (i, line) in lines(reader)?.into_iter().enumerate() {
        let row = i + 1;
        if line.is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format { row, msg: "expected news_id<TAB>values".into() })?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format { row, msg: e.to_string() })?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format { row, msg: "non-finite feature value".into() });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Format { row, msg: format!("width {} differs from {w}", values.len()) })
            }
            _ => {}
        }
        out.insert(id.trim().to_string(), values);
    }
    Ok(out)
}

pub fn write_news_tsv<W: Write>(mut w: W, catalog: &BTreeMap<String, NewsContent>) -> Result<()> {
    for n in catalog.values() {
        let cat = n.category.as_deref().unwrap_or("");
        writeln!(w, "{}\t{}\t\t{}\t\t\t\t", n.news_id, cat, n.title)?;
    }
    Ok(())
}

pub fn write_behaviors_tsv<W: Write>(
    mut w: W,
    impressions: &[Impression],
    users: &BTreeMap<String, ClickHistory>,
) -> Result<()> {
    for imp in impressions {
        let history = users.get(&imp.user_id).map(|h| h.clicked.join(" ")).unwrap_or_default();
        let cands: Vec<String> =
            imp.candidates.iter().map(|(id, l)| format!("{id}-{}", if *l { 1 } else { 0 })).collect();
        writeln!(w, "{}\t{}\t{}\t{}\t{}", imp.impression_id, imp.user_id, imp.timestamp, history, cands.join(" "))?;
    }
    Ok(())
}

pub fn write_features_tsv<W: Write>(mut w: W, catalog: &BTreeMap<String, NewsContent>) -> Result<()> {
    for n in catalog.values() {
        if let Some(f) = &n.image_feature {
            let vals: Vec<String> = f.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}\t{}", n.news_id, vals.join(","))?;
        }
    }
    Ok(())
}
