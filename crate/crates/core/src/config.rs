//! Pipeline configuration, loadable from a sectioned key/value (TOML) file.
//!
//! ```toml
//! seed = 0
//!
//! [tokenizer]
//! extra_delimiters = ["=", ",", ":"]
//!
//! [dbscan]
//! eps = 0.05
//! min_pts = 2
//!
//! [labeler]
//! tau = 0.9
//! count_mode = "document"
//!
//! [tagger]
//! architecture = "recurrent_bidir"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::DbscanConfig;
use crate::corpus::TokenizerConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::labeler::LabelerConfig;
use crate::tagger::TaggerConfig;

const MODULE: &str = "config";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    pub encoder_file: String,
    pub tagger_file: String,
    pub store_file: String,
    pub labeled_file: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: PathBuf::from("logstamp-out"),
            encoder_file: "encoder.bin".into(),
            tagger_file: "tagger.bin".into(),
            store_file: "templates.csv".into(),
            labeled_file: "labeled.jsonl".into(),
        }
    }
}

impl PathsConfig {
    pub fn encoder_path(&self) -> PathBuf {
        self.out_dir.join(&self.encoder_file)
    }

    pub fn tagger_path(&self) -> PathBuf {
        self.out_dir.join(&self.tagger_file)
    }

    pub fn store_path(&self) -> PathBuf {
        self.out_dir.join(&self.store_file)
    }

    pub fn labeled_path(&self) -> PathBuf {
        self.out_dir.join(&self.labeled_file)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for the train split.
    pub seed: u64,
    pub tokenizer: TokenizerConfig,
    pub encoder: EncoderConfig,
    pub dbscan: DbscanConfig,
    pub labeler: LabelerConfig,
    pub tagger: TaggerConfig,
    /// Output locations; not part of reported provenance.
    #[serde(skip_serializing)]
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::parameter(MODULE, format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::input(MODULE, format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Uses `seed` for the split, the encoder and the tagger.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.encoder.seed = seed;
        self.tagger.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.dbscan.validate()?;
        self.labeler.validate()?;
        self.tagger.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeler::CountMode;
    use crate::tagger::Architecture;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = PipelineConfig::from_toml_str(
            "seed = 3\n[dbscan]\neps = 0.1\n[labeler]\ncount_mode = \"positional\"\n[tagger]\narchitecture = \"convolutional\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.dbscan.eps, 0.1);
        assert_eq!(cfg.dbscan.min_pts, 2);
        assert_eq!(cfg.labeler.count_mode, CountMode::Positional);
        assert_eq!(cfg.tagger.architecture, Architecture::Convolutional);
        assert_eq!(cfg.encoder, EncoderConfig::default());
    }

    #[test]
    fn invalid_values_rejected_at_load() {
        for text in ["[labeler]\ntau = 1.5\n", "[dbscan]\nmin_pts = 0\n", "[encoder]\nepochs = 0\n", "[bogus]\nx = 1\n"] {
            assert!(
                matches!(PipelineConfig::from_toml_str(text), Err(Error::Parameter { .. })),
                "{text}"
            );
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = PipelineConfig::default().with_seed(9);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
