mod common;

use logstamp::corpus::TokenizerConfig;
use logstamp::encoder::{train_encoder, EncoderConfig, EncoderModel};
use logstamp::labeler::{LabeledSentence, WordLabel};
use logstamp::tagger::{
    prepare_examples, tag, token_accuracy, train_tagger, Architecture, TaggerConfig, TaggerModel,
};
use logstamp::{synth, Error};

const CONSTANT_WORDS: [&str; 8] = ["Interface", "change", "state", "to", "down", "Receiving", "block", "src"];

/// Ground-truth labels for the two-template corpus: everything outside the
/// fixed wording is a variable.
fn truth_labels(ds: &logstamp::corpus::Dataset) -> Vec<LabeledSentence> {
    ds.records
        .iter()
        .map(|r| LabeledSentence {
            record_id: r.id,
            tokens: r.tokens.clone(),
            labels: r
                .tokens
                .iter()
                .map(|t| {
                    if CONSTANT_WORDS.contains(&t.as_str()) || t == "dest" {
                        WordLabel::Template
                    } else {
                        WordLabel::Variable
                    }
                })
                .collect(),
            cluster_id: 0,
        })
        .collect()
}

#[test]
fn every_architecture_passes_gradient_check() {
    for arch in Architecture::ALL {
        let report = common::tagger_gradient_report(arch);
        assert!(report.entries > 0);
        assert!(
            report.max_rel_error < common::GRAD_TOLERANCE,
            "{}: {} ({})",
            arch.as_str(),
            report.max_rel_error,
            report.worst
        );
    }
}

fn small_encoder(ds: &logstamp::corpus::Dataset) -> EncoderModel {
    let cfg = EncoderConfig { embed_dim: 16, hidden_dim: 16, epochs: 2, ..EncoderConfig::default() };
    train_encoder(ds, &cfg).unwrap()
}

#[test]
fn learns_two_template_labels_and_generalises() {
    let train = synth::two_template_dataset(200, 21);
    let held_out = synth::two_template_dataset(200, 22);
    let encoder = small_encoder(&train);
    let tagger = train_tagger(&truth_labels(&train), &encoder, &TaggerConfig::default()).unwrap();

    let acc = token_accuracy(&tagger, &encoder, &truth_labels(&held_out)).unwrap();
    assert!(acc >= 0.99, "held-out token accuracy {acc}");

    let tokens = logstamp::corpus::tokenize("Interface te-9/9/99 change state to down", &TokenizerConfig::default());
    assert!(!encoder.vocab.contains("te-9/9/99"));
    use WordLabel::{Template as T, Variable as V};
    assert_eq!(tag(&tagger, &encoder, &tokens).unwrap(), vec![T, V, T, T, T, T]);
}

#[test]
fn all_template_targets_give_all_template_predictions() {
    let ds = synth::one_template_dataset(50, 3);
    let encoder = small_encoder(&ds);
    let labeled: Vec<LabeledSentence> = ds
        .records
        .iter()
        .map(|r| LabeledSentence {
            record_id: r.id,
            tokens: r.tokens.clone(),
            labels: vec![WordLabel::Template; r.tokens.len()],
            cluster_id: 0,
        })
        .collect();
    for arch in Architecture::ALL {
        let cfg = TaggerConfig { architecture: arch, epochs: 3, ..TaggerConfig::default() };
        let tagger = train_tagger(&labeled, &encoder, &cfg).unwrap();
        let pred = tag(&tagger, &encoder, &["Session", "77", "opened", "for", "user", "admin"]).unwrap();
        assert!(pred.iter().all(|l| *l == WordLabel::Template), "{}: {pred:?}", arch.as_str());
    }
}

#[test]
fn training_is_deterministic() {
    let ds = synth::two_template_dataset(40, 8);
    let encoder = small_encoder(&ds);
    let labeled = truth_labels(&ds);
    for arch in Architecture::ALL {
        let cfg = TaggerConfig { architecture: arch, epochs: 2, ..TaggerConfig::default() };
        let a = train_tagger(&labeled, &encoder, &cfg).unwrap();
        let b = train_tagger(&labeled, &encoder, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes(), "{}", arch.as_str());
    }
}

#[test]
fn label_arity_mismatch_is_rejected() {
    let ds = synth::two_template_dataset(5, 1);
    let encoder = small_encoder(&ds);
    let mut labeled = truth_labels(&ds);
    labeled[2].labels.pop();
    assert!(matches!(prepare_examples(&labeled, &encoder), Err(Error::Consistency { .. })));
}

#[test]
fn recurrent_tagger_captures_long_range_dependencies() {
    let (recurrent, conv) = common::long_range_accuracies();
    assert!(recurrent - conv >= 0.05, "recurrent {recurrent} convolutional {conv}");
}

#[test]
fn model_files_round_trip_and_reject_damage() {
    let ds = synth::two_template_dataset(30, 6);
    let encoder = small_encoder(&ds);
    let labeled = truth_labels(&ds);
    let dir = tempfile::tempdir().unwrap();
    for arch in Architecture::ALL {
        let cfg = TaggerConfig { architecture: arch, epochs: 1, ..TaggerConfig::default() };
        let model = train_tagger(&labeled, &encoder, &cfg).unwrap();
        let path = dir.path().join(format!("{}.bin", arch.as_str()));
        model.save(&path).unwrap();
        let back = TaggerModel::load(&path).unwrap();
        assert_eq!(back.architecture(), arch);
        let xs = encoder.embed_tokens(&ds.records[0].tokens).unwrap();
        assert_eq!(model.logits(&xs), back.logits(&xs));

        let bytes = model.to_bytes();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 6;
        flipped[last] ^= 1;
        assert!(matches!(TaggerModel::from_bytes(&flipped), Err(Error::Corruption { .. })));

        let mut future = bytes.clone();
        future[9..11].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(TaggerModel::from_bytes(&future), Err(Error::Format { .. })));

        assert!(matches!(EncoderModel::from_bytes(&bytes), Err(Error::Format { .. })));
    }
}
