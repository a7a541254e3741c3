//! Loghub-style dataset loading, tokenisation and train splits.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, Read};
use std::path::Path;

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MODULE: &str = "corpus";

/// One tokenised log message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub id: usize,
    pub content: String,
    pub tokens: Vec<String>,
    pub truth_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<LogRecord>,
    /// True iff every record carries a ground-truth group.
    pub labeled: bool,
    /// Rows dropped while loading (empty content or undecodable bytes).
    pub skipped: usize,
}

impl Dataset {
    /// Builds a dataset from raw message bodies, assigning contiguous ids and
    /// dropping lines that tokenise to nothing.
    pub fn from_lines<I, S>(name: &str, lines: I, config: &TokenizerConfig) -> Dataset
    where
        I: IntoIterator<Item = (S, Option<String>)>,
        S: AsRef<str>,
    {
        let mut records = Vec::new();
        let mut skipped = 0;
        for (content, truth) in lines {
            let content = content.as_ref();
            let tokens = tokenize(content, config);
            if tokens.is_empty() {
                skipped += 1;
                continue;
            }
            records.push(LogRecord {
                id: records.len(),
                content: content.to_string(),
                tokens,
                truth_group: truth,
            });
        }
        let labeled = !records.is_empty() && records.iter().all(|r| r.truth_group.is_some());
        Dataset { name: name.to_string(), records, labeled, skipped }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    /// Token boundaries in addition to whitespace.
    pub extra_delimiters: BTreeSet<char>,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            extra_delimiters: ['=', ',', ':', '(', ')', '[', ']'].into_iter().collect(),
            lowercase: false,
        }
    }
}

/// Splits `content` into maximal runs of non-delimiter characters.
pub fn tokenize(content: &str, config: &TokenizerConfig) -> Vec<String> {
    content
        .split(|c: char| c.is_whitespace() || config.extra_delimiters.contains(&c))
        .filter(|t| !t.is_empty())
        .map(|t| if config.lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// Column names used when reading a structured CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvColumns {
    pub content: String,
    pub truth: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns { content: "Content".to_string(), truth: "EventId".to_string() }
    }
}

/// Reads a Loghub `*_structured.csv` file with the default column names.
pub fn load_loghub_csv(path: &Path, config: &TokenizerConfig) -> Result<Dataset> {
    load_loghub_csv_with(path, config, &CsvColumns::default())
}

pub fn load_loghub_csv_with(
    path: &Path,
    config: &TokenizerConfig,
    columns: &CsvColumns,
) -> Result<Dataset> {
    let file = File::open(path)
        .map_err(|e| Error::input(MODULE, format!("cannot open {}: {e}", path.display())))?;
    load_loghub_reader(file, &dataset_name(path), config, columns)
        .map_err(|e| match e {
            Error::Input { module, message } => {
                Error::Input { module, message: format!("{}: {message}", path.display()) }
            }
            other => other,
        })
}

/// Reads structured CSV from any reader; `name` becomes the dataset name.
pub fn load_loghub_reader<R: Read>(
    input: R,
    name: &str,
    config: &TokenizerConfig,
    columns: &CsvColumns,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);

    let headers = reader.byte_headers().map_err(|e| Error::input(MODULE, e.to_string()))?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyDataset { module: MODULE, message: format!("{name}: no header row") });
    }
    let find = |name: &str| headers.iter().position(|h| trim_bom(h) == name.as_bytes());
    let content_idx = find(&columns.content).ok_or_else(|| {
        Error::schema(MODULE, format!("{name}: no `{}` column", columns.content))
    })?;
    let truth_idx = find(&columns.truth);

    let mut rows = Vec::new();
    let mut undecodable = 0;
    for row in reader.byte_records() {
        let row = row.map_err(|e| Error::input(MODULE, e.to_string()))?;
        let content = row.get(content_idx).map(std::str::from_utf8);
        let truth = truth_idx.and_then(|i| row.get(i)).map(std::str::from_utf8);
        match (content, truth) {
            (Some(Ok(c)), None) => rows.push((c.to_string(), None)),
            (Some(Ok(c)), Some(Ok(t))) => rows.push((c.to_string(), Some(t.to_string()))),
            (None, _) => rows.push((String::new(), None)),
            _ => undecodable += 1,
        }
    }
    if rows.is_empty() && undecodable == 0 {
        return Err(Error::EmptyDataset { module: MODULE, message: format!("{name}: no data rows") });
    }

    let mut dataset = Dataset::from_lines(name, rows, config);
    if truth_idx.is_none() {
        dataset.labeled = false;
    }
    if dataset.skipped > 0 {
        warn!("{name}: skipped {} empty rows", dataset.skipped);
    }
    if undecodable > 0 {
        warn!("{name}: skipped {undecodable} rows with invalid UTF-8");
    }
    dataset.skipped += undecodable;
    Ok(dataset)
}

/// One record per line of plain text; lines that are not UTF-8 or have no
/// tokens are skipped and counted. No ground truth.
pub fn load_text_lines<R: BufRead>(input: R, name: &str, config: &TokenizerConfig) -> Result<Dataset> {
    let mut lines = Vec::new();
    let mut undecodable = 0;
    for raw in input.split(b'\n') {
        let raw = raw.map_err(|e| Error::io(MODULE, e))?;
        let raw = raw.strip_suffix(b"\r").unwrap_or(&raw);
        match std::str::from_utf8(raw) {
            Ok(s) => lines.push((s.to_string(), None)),
            Err(_) => undecodable += 1,
        }
    }
    let mut ds = Dataset::from_lines(name, lines, config);
    ds.skipped += undecodable;
    if ds.is_empty() {
        return Err(Error::EmptyDataset { module: MODULE, message: format!("{name}: no non-empty lines") });
    }
    Ok(ds)
}

fn trim_bom(h: &[u8]) -> &[u8] {
    h.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(h)
}

/// `HDFS_2k.log_structured.csv` → `HDFS`.
pub fn dataset_name(path: &Path) -> String {
    let stem = path.file_name().and_then(|s| s.to_str()).unwrap_or("custom");
    stem.split(['_', '.']).next().filter(|s| !s.is_empty()).unwrap_or("custom").to_string()
}

/// Samples `round(fraction · n)` records (at least one) without replacement.
///
/// Returns `(train, test)` where `test` is the whole dataset. Train records
/// keep their source ids and are ordered by id.
pub fn split_train(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::parameter(MODULE, format!("fraction must be in (0, 1], got {fraction}")));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset {
            module: MODULE,
            message: "cannot split an empty dataset".into(),
        });
    }
    let n = dataset.len();
    let take = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, take).into_vec();
    picked.sort_unstable();
    let train = Dataset {
        name: dataset.name.clone(),
        records: picked.into_iter().map(|i| dataset.records[i].clone()).collect(),
        labeled: dataset.labeled,
        skipped: 0,
    };
    Ok((train, dataset.clone()))
}
