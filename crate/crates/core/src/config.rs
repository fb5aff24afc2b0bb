//! Run configuration shared by every pipeline stage.
//!
//! Configs are TOML files; unknown keys are rejected. Environment variables
//! may override paths (`EMPHI_DIALOGUES_DIR`, `EMPHI_INTENTS_PATH`,
//! `EMPHI_WORK_DIR`), never hyperparameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intent_classifier::ClassifierConfig;
use crate::model::ModelConfig;
use crate::training::TrainingConfig;

pub const DEFAULT_MAX_VOCAB: usize = 8_000;
pub const DEFAULT_MIN_FREQ: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory holding `train.csv`, `valid.csv` and `test.csv`.
    pub dialogues_dir: PathBuf,
    /// Labeled intent corpus (CSV or TSV with a header).
    pub intents_path: PathBuf,
    /// Where every artifact is written.
    pub work_dir: PathBuf,
    /// Optional text-format word vectors for the embedding table.
    pub vectors: Option<PathBuf>,
    /// Optional stop-word list replacing the built-in one.
    pub stopwords: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dialogues_dir: PathBuf::from("data/empatheticdialogues"),
            intents_path: PathBuf::from("data/empathetic_intents.csv"),
            work_dir: PathBuf::from("work"),
            vectors: None,
            stopwords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub max_vocab: usize,
    pub min_freq: u64,
    /// Fraction of training conversations kept, for subsampled runs.
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            max_vocab: DEFAULT_MAX_VOCAB,
            min_freq: DEFAULT_MIN_FREQ,
            train_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeywordConfig {
    pub k: usize,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        KeywordConfig { k: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Responses sampled per test context.
    pub samples: usize,
    pub max_response_len: usize,
    /// Evaluate only the first N test contexts.
    pub max_cases: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 5,
            max_response_len: 32,
            max_cases: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub keywords: KeywordConfig,
    pub classifier: ClassifierConfig,
    /// `vocab_size` is taken from the prepared vocabulary.
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            keywords: KeywordConfig::default(),
            classifier: ClassifierConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig {
                seed: 42,
                ..TrainingConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.training.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies path overrides from the environment.
    pub fn apply_env(&mut self) {
        self.apply_overrides(|k| std::env::var_os(k));
    }

    pub fn apply_overrides(&mut self, get: impl Fn(&str) -> Option<std::ffi::OsString>) {
        if let Some(v) = get("EMPHI_DIALOGUES_DIR") {
            self.paths.dialogues_dir = v.into();
        }
        if let Some(v) = get("EMPHI_INTENTS_PATH") {
            self.paths.intents_path = v.into();
        }
        if let Some(v) = get("EMPHI_WORK_DIR") {
            self.paths.work_dir = v.into();
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.seed = seed;
    }

    /// Checks value ranges and that configured optional input files exist.
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.keywords.k == 0 {
            return Err(Error::Config("keywords.k must be positive".into()));
        }
        if self.eval.samples == 0 || self.eval.max_response_len == 0 {
            return Err(Error::Config(
                "eval.samples and eval.max_response_len must be positive".into(),
            ));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction <= 1.0) {
            return Err(Error::Config(
                "data.train_fraction must be in (0, 1]".into(),
            ));
        }
        for p in self.paths.vectors.iter().chain(&self.paths.stopwords) {
            if !p.is_file() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.training.loss_weights, [1.0, 0.5, 0.5, 1.0]);
        assert_eq!(cfg.training.learning_rate, 1e-4);
        assert_eq!(cfg.training.batch_size, 16);
        assert_eq!(cfg.eval.samples, 5);
        assert_eq!(cfg.keywords.k, 30);
    }

    #[test]
    fn partial_file_and_seed_propagation() {
        let cfg = RunConfig::from_toml(
            "seed = 7\n[training]\nmax_epochs = 2\n[model]\nembedding_dim = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.training.seed, 7);
        assert_eq!(cfg.training.max_epochs, 2);
        assert_eq!(cfg.model.embedding_dim, 16);
        assert_eq!(cfg.model.encoder_hidden, 300);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            "sed = 1",
            "[training]\nlr = 1.0",
            "[paths]\nfoo = \"x\"",
            "[training]\nseed = 3",
        ] {
            assert!(
                matches!(RunConfig::from_toml(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn env_overrides_paths_only() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(|k| match k {
            "EMPHI_WORK_DIR" => Some("/tmp/w".into()),
            "EMPHI_INTENTS_PATH" => Some("/tmp/i.csv".into()),
            _ => None,
        });
        assert_eq!(cfg.paths.work_dir, PathBuf::from("/tmp/w"));
        assert_eq!(cfg.paths.intents_path, PathBuf::from("/tmp/i.csv"));
        assert_eq!(
            cfg.paths.dialogues_dir,
            PathsConfig::default().dialogues_dir
        );
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.paths.vectors = Some(PathBuf::from("/nonexistent/vectors.txt"));
        assert!(matches!(cfg.validate(), Err(Error::MissingFile(_))));
        let mut cfg = RunConfig::default();
        cfg.training.loss_weights[2] = -1.0;
        assert!(cfg.validate().is_err());
    }
}
