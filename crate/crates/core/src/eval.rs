//! RandIndex between predicted and ground-truth groupings, and the
//! experiment drivers (offline, online, fraction sweep, tagger ablation,
//! eps/tau grid).

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::{split_train, Dataset};
use crate::error::{Error, Result};
use crate::pipeline::{self, OfflineArtifacts};
use crate::tagger::{self, Architecture};

const MODULE: &str = "eval";

/// Record id → group key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub groups: BTreeMap<usize, String>,
}

impl Partition {
    pub fn from_keys<K: ToString>(keys: impl IntoIterator<Item = (usize, K)>) -> Self {
        Partition { groups: keys.into_iter().map(|(id, k)| (id, k.to_string())).collect() }
    }

    /// Ground-truth partition of a labelled dataset.
    pub fn from_truth(dataset: &Dataset) -> Result<Self> {
        if !dataset.labeled {
            return Err(Error::input(MODULE, format!("dataset {} has no ground truth", dataset.name)));
        }
        Ok(Self::from_keys(
            dataset.records.iter().map(|r| (r.id, r.truth_group.clone().unwrap_or_default())),
        ))
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.values().collect::<std::collections::HashSet<_>>().len()
    }

    /// Members of each group, groups ordered by their smallest id.
    pub fn group_members(&self) -> Vec<Vec<usize>> {
        let mut by_key: HashMap<&str, Vec<usize>> = HashMap::new();
        for (id, k) in &self.groups {
            by_key.entry(k.as_str()).or_default().push(*id);
        }
        let mut out: Vec<Vec<usize>> = by_key.into_values().collect();
        out.sort_by_key(|g| g[0]);
        out
    }
}

/// Pair counts over all unordered pairs of records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Same truth group, same predicted group.
    pub tp: u64,
    /// Different truth groups, different predicted groups.
    pub tn: u64,
    /// Different truth groups, same predicted group.
    pub fp: u64,
    /// Same truth group, different predicted groups.
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn pairs(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

/// Exact pair counts via the contingency table of the two partitions.
pub fn pair_counts(predicted: &Partition, truth: &Partition) -> Result<ConfusionCounts> {
    if predicted.groups.len() != truth.groups.len()
        || predicted.groups.keys().zip(truth.groups.keys()).any(|(a, b)| a != b)
    {
        return Err(Error::input(MODULE, "predicted and truth partitions cover different record ids"));
    }
    let n = predicted.len() as u64;
    if n < 2 {
        return Err(Error::parameter(MODULE, format!("need at least 2 records, got {n}")));
    }
    let mut cells: HashMap<(&str, &str), u64> = HashMap::new();
    let mut pred_sizes: HashMap<&str, u64> = HashMap::new();
    let mut truth_sizes: HashMap<&str, u64> = HashMap::new();
    for ((_, p), (_, t)) in predicted.groups.iter().zip(&truth.groups) {
        *cells.entry((p.as_str(), t.as_str())).or_default() += 1;
        *pred_sizes.entry(p.as_str()).or_default() += 1;
        *truth_sizes.entry(t.as_str()).or_default() += 1;
    }
    let tp: u64 = cells.values().map(|&c| pairs(c)).sum();
    let same_pred: u64 = pred_sizes.values().map(|&c| pairs(c)).sum();
    let same_truth: u64 = truth_sizes.values().map(|&c| pairs(c)).sum();
    let fp = same_pred - tp;
    let fn_ = same_truth - tp;
    let tn = pairs(n) - tp - fp - fn_;
    Ok(ConfusionCounts { tp, tn, fp, fn_ })
}

/// `(TP + TN) / (TP + TN + FP + FN)`.
pub fn rand_index(counts: &ConfusionCounts) -> Result<f64> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::parameter(MODULE, "rand index of zero pairs is undefined"));
    }
    Ok((counts.tp + counts.tn) as f64 / total as f64)
}

pub fn rand_index_of(predicted: &Partition, truth: &Partition) -> Result<f64> {
    rand_index(&pair_counts(predicted, truth)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Offline,
    Online,
    Sweep,
    Ablation,
    Grid,
}

/// One experiment outcome. Every field except `runtime_seconds` is a pure
/// function of the dataset and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub mode: Mode,
    pub fraction: f64,
    pub seed: u64,
    pub config: PipelineConfig,
    pub rand_index: f64,
    pub num_templates_predicted: usize,
    pub num_templates_truth: usize,
    pub train_records: usize,
    pub clusters: usize,
    pub noise_fraction: f64,
    pub tagger_train_accuracy: f64,
    pub runtime_seconds: f64,
}

impl Report {
    /// Pretty JSON with `runtime_seconds` zeroed, for byte comparisons.
    pub fn deterministic_json(&self) -> String {
        let mut copy = self.clone();
        copy.runtime_seconds = 0.0;
        serde_json::to_string_pretty(&copy).expect("report serialises")
    }
}

/// Parses every record of `dataset` with trained artifacts and scores it.
fn score(
    dataset: &Dataset,
    truth: &Partition,
    artifacts: &OfflineArtifacts,
    config: &PipelineConfig,
    mode: Mode,
    fraction: f64,
    started: Instant,
) -> Result<Report> {
    let (results, store) = pipeline::parse_dataset(&artifacts.encoder, &artifacts.tagger, dataset, &config.tokenizer)?;
    let predicted = crate::parser::induced_partition(&results)?;
    let truth = restrict(truth, &predicted);
    Ok(Report {
        dataset: dataset.name.clone(),
        mode,
        fraction,
        seed: config.seed,
        config: config.clone(),
        rand_index: rand_index_of(&predicted, &truth)?,
        num_templates_predicted: store.len(),
        num_templates_truth: truth.num_groups(),
        train_records: artifacts.train_records,
        clusters: artifacts.assignment.num_clusters,
        noise_fraction: artifacts.stats.noise_fraction,
        tagger_train_accuracy: artifacts.tagger.training_meta.train_accuracy,
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

fn restrict(truth: &Partition, to: &Partition) -> Partition {
    Partition {
        groups: truth.groups.iter().filter(|(id, _)| to.groups.contains_key(id)).map(|(k, v)| (*k, v.clone())).collect(),
    }
}

/// Train on `fraction` of the records (seeded), parse all of them.
pub fn run_online_experiment(dataset: &Dataset, fraction: f64, config: &PipelineConfig) -> Result<Report> {
    run_with_mode(dataset, fraction, config, Mode::Online)
}

/// Train on every record, parse all of them.
pub fn run_offline_experiment(dataset: &Dataset, config: &PipelineConfig) -> Result<Report> {
    run_with_mode(dataset, 1.0, config, Mode::Offline)
}

fn run_with_mode(dataset: &Dataset, fraction: f64, config: &PipelineConfig, mode: Mode) -> Result<Report> {
    config.validate()?;
    let truth = Partition::from_truth(dataset)?;
    let started = Instant::now();
    let (train, _) = split_train(dataset, fraction, config.seed)?;
    let artifacts = pipeline::train_offline(&train, config)?;
    score(dataset, &truth, &artifacts, config, mode, fraction, started)
}

pub const SWEEP_FRACTIONS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// One online run per fraction, same configuration and seed.
pub fn run_fraction_sweep(dataset: &Dataset, fractions: &[f64], config: &PipelineConfig) -> Result<Vec<Report>> {
    fractions
        .iter()
        .map(|&f| {
            let mut r = run_online_experiment(dataset, f, config)?;
            r.mode = Mode::Sweep;
            Ok(r)
        })
        .collect()
}

/// Same encoder and pseudo-labels, one tagger per architecture.
pub fn run_tagger_ablation(dataset: &Dataset, fraction: f64, config: &PipelineConfig) -> Result<Vec<Report>> {
    config.validate()?;
    let truth = Partition::from_truth(dataset)?;
    let started = Instant::now();
    let (train, _) = split_train(dataset, fraction, config.seed)?;
    let shared = pipeline::train_offline(&train, config)?;
    let examples = tagger::prepare_examples(&shared.labeled, &shared.encoder)?;

    let mut reports = Vec::new();
    for arch in Architecture::ALL {
        let mut cfg = config.clone();
        cfg.tagger.architecture = arch;
        let artifacts = if arch == config.tagger.architecture {
            shared.clone()
        } else {
            let tagger = tagger::train_on_examples(&examples, shared.encoder.embed_dim, &cfg.tagger)?;
            OfflineArtifacts { tagger, ..shared.clone() }
        };
        let mut r = score(dataset, &truth, &artifacts, &cfg, Mode::Ablation, fraction, started)?;
        r.runtime_seconds = started.elapsed().as_secs_f64();
        reports.push(r);
    }
    Ok(reports)
}

pub const GRID_EPS: [f64; 4] = [0.02, 0.05, 0.1, 0.2];
pub const GRID_TAU: [f64; 3] = [0.8, 0.9, 1.0];

/// Every `(eps, tau)` combination on one shared encoder. Reports come back
/// in grid order; pick with [`best_report`].
pub fn run_grid(
    dataset: &Dataset,
    fraction: f64,
    config: &PipelineConfig,
    eps_values: &[f64],
    tau_values: &[f64],
) -> Result<Vec<Report>> {
    config.validate()?;
    let truth = Partition::from_truth(dataset)?;
    let (train, _) = split_train(dataset, fraction, config.seed)?;
    let encoder = crate::encoder::train_encoder(&train, &config.encoder)?;
    let embeddings = pipeline::sentence_embeddings(&encoder, &train)?;

    let mut reports = Vec::new();
    for &eps in eps_values {
        for &tau in tau_values {
            let started = Instant::now();
            let mut cfg = config.clone();
            cfg.dbscan.eps = eps;
            cfg.labeler.tau = tau;
            cfg.validate()?;
            let artifacts = match pipeline::train_from_embeddings(&train, encoder.clone(), &embeddings, &cfg) {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("{}: eps={eps} tau={tau} skipped: {e}", dataset.name);
                    continue;
                }
            };
            let mut r = score(dataset, &truth, &artifacts, &cfg, Mode::Grid, fraction, started)?;
            r.runtime_seconds = started.elapsed().as_secs_f64();
            reports.push(r);
        }
    }
    Ok(reports)
}

/// Highest RandIndex; the earliest wins ties.
pub fn best_report(reports: &[Report]) -> Option<&Report> {
    reports.iter().fold(None, |best: Option<&Report>, r| match best {
        Some(b) if b.rand_index >= r.rand_index => Some(b),
        _ => Some(r),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(keys: &[&str]) -> Partition {
        Partition::from_keys(keys.iter().enumerate().map(|(i, k)| (i, *k)))
    }

    #[test]
    fn agreement_case() {
        let p = part(&["a", "a", "b", "b"]);
        let c = pair_counts(&p, &p).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, tn: 4, fp: 0, fn_: 0 });
        assert_eq!(rand_index(&c).unwrap(), 1.0);
    }

    #[test]
    fn total_split_case() {
        let pred = part(&["1", "2", "3"]);
        let truth = part(&["g", "g", "g"]);
        let c = pair_counts(&pred, &truth).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, tn: 0, fp: 0, fn_: 3 });
        assert_eq!(rand_index(&c).unwrap(), 0.0);
    }

    #[test]
    fn merged_prediction_counts_false_positives() {
        let pred = part(&["x", "x", "x"]);
        let truth = part(&["a", "a", "b"]);
        let c = pair_counts(&pred, &truth).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, tn: 0, fp: 2, fn_: 0 });
    }

    #[test]
    fn errors() {
        let a = part(&["a", "b"]);
        let b = Partition::from_keys([(0, "a"), (5, "b")]);
        assert!(matches!(pair_counts(&a, &b), Err(Error::Input { .. })));
        let one = part(&["a"]);
        assert!(matches!(pair_counts(&one, &one), Err(Error::Parameter { .. })));
        assert!(matches!(rand_index(&ConfusionCounts::default()), Err(Error::Parameter { .. })));
    }

    #[test]
    fn best_report_prefers_first_on_ties() {
        assert!(best_report(&[]).is_none());
    }
}
