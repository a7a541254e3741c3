//! Log parsing by sequence tagging.
//!
//! Offline, a compact contextual encoder is trained on raw log lines with a
//! masked-token objective. Sentence embeddings are grouped with DBSCAN,
//! tokens are pseudo-labelled TEMPLATE or VARIABLE by how often they occur
//! within their cluster, and a word tagger is trained on those labels.
//! Online, each incoming line is tagged and turned into a template with
//! `<*>` placeholders.

pub mod cli;
pub mod cluster;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod labeler;
pub mod linalg;
mod modelfile;
pub mod parser;
pub mod pipeline;
pub mod synth;
pub mod tagger;

pub use error::{Error, Result};
