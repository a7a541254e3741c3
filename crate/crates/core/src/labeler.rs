//! Pseudo-labels from intra-cluster token frequency.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterAssignment, ClusterLabel};
use crate::corpus::LogRecord;
use crate::error::{Error, Result};

const MODULE: &str = "labeler";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordLabel {
    #[serde(rename = "T")]
    Template,
    #[serde(rename = "V")]
    Variable,
}

impl WordLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            WordLabel::Template => "T",
            WordLabel::Variable => "V",
        }
    }

    /// Class index used by the tagger: template 0, variable 1.
    pub fn class(self) -> usize {
        match self {
            WordLabel::Template => 0,
            WordLabel::Variable => 1,
        }
    }
}

impl fmt::Display for WordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// Records in the cluster containing the token at least once.
    Document,
    /// Records in the cluster with the token at the same position.
    Positional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelerConfig {
    /// A token is TEMPLATE iff its frequency ratio within the cluster is `>= tau`.
    pub tau: f64,
    pub count_mode: CountMode,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig { tau: 0.9, count_mode: CountMode::Document }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::parameter(MODULE, format!("tau must be in (0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub record_id: usize,
    pub tokens: Vec<String>,
    pub labels: Vec<WordLabel>,
    pub cluster_id: usize,
}

/// Labels every token of every clustered record. `assignment.labels[i]`
/// belongs to `records[i]`; noise records produce no sentence.
pub fn pseudo_label(
    records: &[LogRecord],
    assignment: &ClusterAssignment,
    config: &LabelerConfig,
) -> Result<Vec<LabeledSentence>> {
    config.validate()?;
    if assignment.labels.len() < records.len() {
        let missing = &records[assignment.labels.len()];
        return Err(Error::consistency(
            MODULE,
            format!("record {} has no cluster assignment", missing.id),
        ));
    }

    let mut out = Vec::new();
    for (cluster_id, members) in assignment.members().into_iter().enumerate() {
        let members: Vec<&LogRecord> =
            members.into_iter().filter_map(|i| records.get(i)).collect();
        if members.is_empty() {
            continue;
        }
        let size = members.len() as f64;
        let is_template = |count: usize| count as f64 / size >= config.tau;

        match config.count_mode {
            CountMode::Document => {
                let mut df: HashMap<&str, usize> = HashMap::new();
                for r in &members {
                    let uniq: HashSet<&str> = r.tokens.iter().map(String::as_str).collect();
                    for t in uniq {
                        *df.entry(t).or_default() += 1;
                    }
                }
                for r in &members {
                    let labels = r
                        .tokens
                        .iter()
                        .map(|t| label_for(is_template(df[t.as_str()])))
                        .collect();
                    out.push(sentence(r, labels, cluster_id));
                }
            }
            CountMode::Positional => {
                let mut pf: HashMap<(usize, &str), usize> = HashMap::new();
                for r in &members {
                    for (i, t) in r.tokens.iter().enumerate() {
                        *pf.entry((i, t.as_str())).or_default() += 1;
                    }
                }
                for r in &members {
                    let labels = r
                        .tokens
                        .iter()
                        .enumerate()
                        .map(|(i, t)| label_for(is_template(pf[&(i, t.as_str())])))
                        .collect();
                    out.push(sentence(r, labels, cluster_id));
                }
            }
        }
    }
    out.sort_by_key(|s| s.record_id);
    Ok(out)
}

fn label_for(template: bool) -> WordLabel {
    if template {
        WordLabel::Template
    } else {
        WordLabel::Variable
    }
}

fn sentence(r: &LogRecord, labels: Vec<WordLabel>, cluster_id: usize) -> LabeledSentence {
    LabeledSentence { record_id: r.id, tokens: r.tokens.clone(), labels, cluster_id }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabelCounts {
    pub records: usize,
    pub template_tokens: usize,
    pub variable_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStatistics {
    pub per_cluster: BTreeMap<usize, ClusterLabelCounts>,
    pub template_tokens: usize,
    pub variable_tokens: usize,
    /// Share of all tokens labelled VARIABLE; 0 when there are none.
    pub variable_fraction: f64,
    /// Share of input records left out as noise; 0 when `total_records` is 0.
    pub noise_fraction: f64,
}

/// Summarises pseudo-labels. `total_records` is the number of records that
/// were clustered, so the noise share can be reported.
pub fn label_statistics(labeled: &[LabeledSentence], total_records: usize) -> LabelStatistics {
    let mut stats = LabelStatistics::default();
    for s in labeled {
        let entry = stats.per_cluster.entry(s.cluster_id).or_default();
        entry.records += 1;
        for l in &s.labels {
            match l {
                WordLabel::Template => entry.template_tokens += 1,
                WordLabel::Variable => entry.variable_tokens += 1,
            }
        }
    }
    stats.template_tokens = stats.per_cluster.values().map(|c| c.template_tokens).sum();
    stats.variable_tokens = stats.per_cluster.values().map(|c| c.variable_tokens).sum();
    let tokens = stats.template_tokens + stats.variable_tokens;
    if tokens > 0 {
        stats.variable_fraction = stats.variable_tokens as f64 / tokens as f64;
    }
    if total_records > 0 {
        stats.noise_fraction = total_records.saturating_sub(labeled.len()) as f64 / total_records as f64;
    }
    stats
}

/// One JSON object per sentence: `{record_id, tokens, labels, cluster_id}`.
pub fn write_jsonl<W: Write>(mut out: W, labeled: &[LabeledSentence]) -> Result<()> {
    for s in labeled {
        serde_json::to_writer(&mut out, s).map_err(|e| Error::io(MODULE, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(MODULE, e))?;
    }
    Ok(())
}

/// Convenience for building an assignment where every record is noise or
/// belongs to the listed cluster.
pub fn assignment_from(labels: &[Option<usize>]) -> ClusterAssignment {
    let num_clusters = labels.iter().flatten().map(|c| c + 1).max().unwrap_or(0);
    ClusterAssignment {
        labels: labels
            .iter()
            .map(|l| l.map_or(ClusterLabel::Noise, ClusterLabel::Cluster))
            .collect(),
        num_clusters,
    }
}
