//! Online parsing: tag a line, turn it into a template, and keep a store of
//! every template seen so far.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, LogRecord, TokenizerConfig};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::eval::Partition;
use crate::labeler::WordLabel;
use crate::tagger::{tag, TaggerModel};

const MODULE: &str = "parser";
pub const PLACEHOLDER: &str = "<*>";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TemplatePart {
    Literal(String),
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub parts: Vec<TemplatePart>,
    pub rendered: String,
}

impl Template {
    pub fn placeholder_count(&self) -> usize {
        self.parts.iter().filter(|p| **p == TemplatePart::Placeholder).count()
    }

    /// Fills placeholders with `variables` (in position order) to recover
    /// the token sequence.
    pub fn substitute(&self, variables: &[(usize, String)]) -> Vec<String> {
        let mut vars = variables.iter();
        self.parts
            .iter()
            .map(|p| match p {
                TemplatePart::Literal(s) => s.clone(),
                TemplatePart::Placeholder => vars.next().map(|(_, v)| v.clone()).unwrap_or_default(),
            })
            .collect()
    }
}

/// Replaces every VARIABLE token with its own placeholder.
pub fn canonicalize<S: AsRef<str>>(tokens: &[S], labels: &[WordLabel]) -> Result<Template> {
    if tokens.len() != labels.len() {
        return Err(Error::consistency(
            MODULE,
            format!("{} tokens but {} labels", tokens.len(), labels.len()),
        ));
    }
    if tokens.is_empty() {
        return Err(Error::input(MODULE, "cannot canonicalize an empty line"));
    }
    let parts: Vec<TemplatePart> = tokens
        .iter()
        .zip(labels)
        .map(|(t, l)| match l {
            WordLabel::Template => TemplatePart::Literal(t.as_ref().to_string()),
            WordLabel::Variable => TemplatePart::Placeholder,
        })
        .collect();
    let rendered = parts
        .iter()
        .map(|p| match p {
            TemplatePart::Literal(s) => s.as_str(),
            TemplatePart::Placeholder => PLACEHOLDER,
        })
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Template { parts, rendered })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredTemplate {
    pub template_id: usize,
    pub rendered: String,
    pub count: usize,
    /// Parse sequence number of the first line that produced it.
    pub first_seen: usize,
}

/// Templates keyed by rendered string, with ids assigned in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateStore {
    by_rendered: HashMap<String, usize>,
    templates: Vec<StoredTemplate>,
    sequence: usize,
}

impl TemplateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn next_id(&self) -> usize {
        self.templates.len()
    }

    pub fn templates(&self) -> &[StoredTemplate] {
        &self.templates
    }

    pub fn get(&self, rendered: &str) -> Option<&StoredTemplate> {
        self.by_rendered.get(rendered).map(|&i| &self.templates[i])
    }

    /// Counts one occurrence; returns `(template_id, is_new)`.
    pub fn observe(&mut self, rendered: &str) -> (usize, bool) {
        let seq = self.sequence;
        self.sequence += 1;
        if let Some(&id) = self.by_rendered.get(rendered) {
            self.templates[id].count += 1;
            return (id, false);
        }
        let id = self.templates.len();
        self.templates.push(StoredTemplate {
            template_id: id,
            rendered: rendered.to_string(),
            count: 1,
            first_seen: seq,
        });
        self.by_rendered.insert(rendered.to_string(), id);
        (id, true)
    }

    /// CSV with columns `template_id,rendered,count`, ordered by id.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::io(MODULE, e.into());
        w.write_record(["template_id", "rendered", "count"]).map_err(io)?;
        for t in &self.templates {
            w.write_record([t.template_id.to_string(), t.rendered.clone(), t.count.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(MODULE, e))
    }

    /// Reads a store written by [`TemplateStore::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(|e| Error::format(MODULE, e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["template_id", "rendered", "count"] {
            return Err(Error::format(MODULE, "store CSV must have template_id,rendered,count columns"));
        }
        let mut store = TemplateStore::new();
        for (row_no, row) in r.records().enumerate() {
            let row = row.map_err(|e| Error::format(MODULE, e.to_string()))?;
            let bad = |what: &str| Error::format(MODULE, format!("row {}: bad {what}", row_no + 1));
            let id: usize = row[0].parse().map_err(|_| bad("template_id"))?;
            let count: usize = row[2].parse().map_err(|_| bad("count"))?;
            if id != store.templates.len() || count == 0 || store.by_rendered.contains_key(&row[1]) {
                return Err(bad("row (ids must be 0.. in order, counts ≥ 1, templates unique)"));
            }
            store.by_rendered.insert(row[1].to_string(), id);
            store.templates.push(StoredTemplate {
                template_id: id,
                rendered: row[1].to_string(),
                count,
                first_seen: store.sequence,
            });
            store.sequence += count;
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseResult {
    pub record_id: usize,
    pub template_id: usize,
    #[serde(rename = "template")]
    pub rendered: String,
    /// `(position, token)` for every placeholder, in position order.
    pub variables: Vec<(usize, String)>,
    #[serde(rename = "new")]
    pub is_new_template: bool,
}

/// Tags one record and records its template. Returns `Ok(None)` for a record
/// without tokens, leaving the store untouched.
pub fn parse_line(
    encoder: &EncoderModel,
    tagger: &TaggerModel,
    store: &mut TemplateStore,
    record: &LogRecord,
) -> Result<Option<ParseResult>> {
    if record.tokens.is_empty() {
        return Ok(None);
    }
    let labels = tag(tagger, encoder, &record.tokens)?;
    let template = canonicalize(&record.tokens, &labels)?;
    let (template_id, is_new_template) = store.observe(&template.rendered);
    let variables = record
        .tokens
        .iter()
        .zip(&labels)
        .enumerate()
        .filter(|(_, (_, l))| **l == WordLabel::Variable)
        .map(|(i, (t, _))| (i, t.clone()))
        .collect();
    Ok(Some(ParseResult { record_id: record.id, template_id, rendered: template.rendered, variables, is_new_template }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub lines: usize,
    pub parsed: usize,
    pub skipped_empty: usize,
    pub skipped_undecodable: usize,
}

/// Parses raw lines one at a time, in order. Line `i` (0-based, counting
/// skipped lines) becomes record id `i`.
pub struct ParseStream<'a, I> {
    encoder: &'a EncoderModel,
    tagger: &'a TaggerModel,
    store: &'a mut TemplateStore,
    tokenizer: &'a TokenizerConfig,
    lines: I,
    stats: StreamStats,
}

pub fn parse_stream<'a, I>(
    encoder: &'a EncoderModel,
    tagger: &'a TaggerModel,
    store: &'a mut TemplateStore,
    tokenizer: &'a TokenizerConfig,
    lines: I,
) -> ParseStream<'a, I::IntoIter>
where
    I: IntoIterator,
    I::Item: AsRef<[u8]>,
{
    ParseStream { encoder, tagger, store, tokenizer, lines: lines.into_iter(), stats: StreamStats::default() }
}

impl<I> ParseStream<'_, I> {
    pub fn stats(&self) -> StreamStats {
        self.stats
    }
}

impl<I> Iterator for ParseStream<'_, I>
where
    I: Iterator,
    I::Item: AsRef<[u8]>,
{
    type Item = Result<ParseResult>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = self.lines.next()?;
            let id = self.stats.lines;
            self.stats.lines += 1;
            let bytes = raw.as_ref();
            let bytes = bytes.strip_suffix(b"\r").unwrap_or(bytes);
            let Ok(text) = std::str::from_utf8(bytes) else {
                self.stats.skipped_undecodable += 1;
                warn!("line {id}: invalid UTF-8, skipped");
                continue;
            };
            let record = LogRecord {
                id,
                content: text.to_string(),
                tokens: tokenize(text, self.tokenizer),
                truth_group: None,
            };
            match parse_line(self.encoder, self.tagger, self.store, &record) {
                Ok(Some(r)) => {
                    self.stats.parsed += 1;
                    return Some(Ok(r));
                }
                Ok(None) => self.stats.skipped_empty += 1,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Record id → template id.
pub fn induced_partition(results: &[ParseResult]) -> Result<Partition> {
    let mut groups = BTreeMap::new();
    for r in results {
        if groups.insert(r.record_id, r.template_id.to_string()).is_some() {
            return Err(Error::consistency(MODULE, format!("record {} parsed twice", r.record_id)));
        }
    }
    Ok(Partition { groups })
}

/// JSONL: `{record_id, template_id, template, variables, new}` per line.
pub fn write_result<W: Write>(out: &mut W, result: &ParseResult) -> Result<()> {
    serde_json::to_writer(&mut *out, result).map_err(|e| Error::io(MODULE, e.into()))?;
    out.write_all(b"\n").map_err(|e| Error::io(MODULE, e))
}
