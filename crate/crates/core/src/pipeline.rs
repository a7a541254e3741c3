//! Offline training (encoder → clusters → pseudo-labels → tagger) and
//! batch parsing of a dataset through the online path.

use crate::cluster::{dbscan, ClusterAssignment};
use crate::config::PipelineConfig;
use crate::corpus::{Dataset, TokenizerConfig};
use crate::encoder::{train_encoder, EncoderModel};
use crate::error::{Error, Result};
use crate::labeler::{label_statistics, pseudo_label, LabelStatistics, LabeledSentence};
use crate::parser::{parse_stream, ParseResult, TemplateStore};
use crate::tagger::{train_tagger, TaggerModel};

const MODULE: &str = "pipeline";

#[derive(Debug, Clone)]
pub struct OfflineArtifacts {
    pub encoder: EncoderModel,
    pub tagger: TaggerModel,
    pub assignment: ClusterAssignment,
    pub labeled: Vec<LabeledSentence>,
    pub stats: LabelStatistics,
    pub train_records: usize,
}

pub fn sentence_embeddings(encoder: &EncoderModel, train: &Dataset) -> Result<Vec<Vec<f64>>> {
    train
        .records
        .iter()
        .map(|r| encoder.embed_sentence(&r.tokens, r.id).map(|s| s.vector))
        .collect()
}

/// Runs the whole offline workflow on `train`.
pub fn train_offline(train: &Dataset, config: &PipelineConfig) -> Result<OfflineArtifacts> {
    config.validate()?;
    let encoder = train_encoder(train, &config.encoder)?;
    let embeddings = sentence_embeddings(&encoder, train)?;
    train_from_embeddings(train, encoder, &embeddings, config)
}

/// Offline workflow from already computed sentence embeddings.
pub fn train_from_embeddings(
    train: &Dataset,
    encoder: EncoderModel,
    embeddings: &[Vec<f64>],
    config: &PipelineConfig,
) -> Result<OfflineArtifacts> {
    let assignment = dbscan(embeddings, &config.dbscan)?;
    let labeled = pseudo_label(&train.records, &assignment, &config.labeler)?;
    if labeled.is_empty() {
        return Err(Error::input(
            MODULE,
            format!(
                "all {} training records were clustered as noise (eps={}, min_pts={})",
                train.len(),
                config.dbscan.eps,
                config.dbscan.min_pts
            ),
        ));
    }
    let stats = label_statistics(&labeled, train.len());
    let tagger = train_tagger(&labeled, &encoder, &config.tagger)?;
    Ok(OfflineArtifacts { encoder, tagger, assignment, labeled, stats, train_records: train.len() })
}

/// Streams every record's content through a fresh template store.
pub fn parse_dataset(
    encoder: &EncoderModel,
    tagger: &TaggerModel,
    dataset: &Dataset,
    tokenizer: &TokenizerConfig,
) -> Result<(Vec<ParseResult>, TemplateStore)> {
    let mut store = TemplateStore::new();
    let lines = dataset.records.iter().map(|r| r.content.as_bytes());
    let mut results: Vec<ParseResult> =
        parse_stream(encoder, tagger, &mut store, tokenizer, lines).collect::<Result<_>>()?;
    // stream ids are positions; map back to dataset ids
    for r in &mut results {
        r.record_id = dataset.records[r.record_id].id;
    }
    Ok((results, store))
}
