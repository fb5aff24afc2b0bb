//! Pipeline stages behind the command-line subcommands.
//!
//! Every stage reads its inputs from the configured paths or from earlier
//! artifacts in the work directory, writes its own artifacts atomically plus
//! a TOML manifest, and never modifies its inputs. A missing artifact is
//! reported together with the subcommand that produces it.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, write_atomic};
use crate::config::RunConfig;
use crate::corpus::{
    load_dialogues, load_intent_corpus, read_jsonl, tokenize, write_jsonl, DialogueExample, Split,
    Vocabulary, MAX_CONTEXT_TOKENS,
};
use crate::error::{Error, Result};
use crate::evalsuite::{self, AuditReport, EvalCase, EvalReport, ModelGenerator};
use crate::intent_classifier::{
    train_classifier, ClassifierManifest, IntentClassifier, IntentRecognizer,
};
use crate::keywords::{default_stopwords, extract_keywords, parse_stopwords, KeywordTable};
use crate::labels::{EmotionLabel, IntentLabel, NUM_INTENTS};
use crate::model::{Ablations, EmphiModel, IntentDistribution};
use crate::rng::{self, Stream};
use crate::training::{self, EpochRecord, KeywordIds, TrainingExample};

/// File layout of the work directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn keywords(&self) -> PathBuf {
        self.root.join("keywords.txt")
    }

    pub fn keywords_manifest(&self) -> PathBuf {
        self.root.join("keywords.manifest.toml")
    }

    pub fn classifier_prefix(&self) -> PathBuf {
        self.root.join("classifier")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("data").join("vocab.txt")
    }

    pub fn split_data(&self, split: Split) -> PathBuf {
        self.root
            .join("data")
            .join(format!("{}.jsonl", split.name()))
    }

    pub fn recognition(&self, split: Split) -> PathBuf {
        self.root
            .join("data")
            .join(format!("{}.recognition.txt", split.name()))
    }

    pub fn data_manifest(&self) -> PathBuf {
        self.root.join("data").join("manifest.toml")
    }

    fn model_stem(ablations: &Ablations) -> String {
        let mut stem = String::from("model");
        for (on, tag) in [
            (ablations.disable_intent, "no-intent"),
            (ablations.disable_gate, "no-gate"),
            (ablations.disable_copy, "no-copy"),
        ] {
            if on {
                stem.push('-');
                stem.push_str(tag);
            }
        }
        stem
    }

    pub fn model_checkpoint(&self, ablations: &Ablations) -> PathBuf {
        self.root
            .join(format!("{}.ckpt", Self::model_stem(ablations)))
    }

    pub fn model_manifest(&self, ablations: &Ablations) -> PathBuf {
        self.root
            .join(format!("{}.manifest.toml", Self::model_stem(ablations)))
    }

    pub fn train_log(&self, ablations: &Ablations) -> PathBuf {
        self.root
            .join(format!("{}.train_log.jsonl", Self::model_stem(ablations)))
    }

    pub fn eval_report(&self, ablations: &Ablations) -> PathBuf {
        self.root
            .join(format!("{}.eval.txt", Self::model_stem(ablations)))
    }

    pub fn eval_responses(&self, ablations: &Ablations) -> PathBuf {
        self.root
            .join(format!("{}.responses.txt", Self::model_stem(ablations)))
    }

    pub fn human_responses(&self) -> PathBuf {
        self.root.join("human_responses.txt")
    }

    pub fn audit_report(&self) -> PathBuf {
        self.root.join("audit.txt")
    }
}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            artifact: path.to_path_buf(),
            producer,
        })
    }
}

fn require_input(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path, producer: &'static str) -> Result<T> {
    require(path, producer)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| Error::format("manifest", format!("{}: {}", path.display(), e.message())))
}

fn stopwords(cfg: &RunConfig) -> Result<HashSet<String>> {
    match &cfg.paths.stopwords {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(parse_stopwords(&text))
        }
        None => Ok(default_stopwords()),
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(checkpoint::sha256_hex(&bytes))
}

// ---- extract-keywords ---------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordsManifest {
    pub k: usize,
    pub corpus_hash: String,
    pub corpus_examples: usize,
    pub table_hash: String,
}

/// Extracts the top-`k` keywords per intent; `out` overrides the
/// default location in the work directory.
pub fn extract_keywords_stage(
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<(KeywordTable, PathBuf)> {
    cfg.validate()?;
    require_input(&cfg.paths.intents_path)?;
    let ws = Workspace::new(&cfg.paths.work_dir);
    let corpus = load_intent_corpus(&cfg.paths.intents_path)?;
    let table = extract_keywords(&corpus, cfg.keywords.k, &stopwords(cfg)?)?;
    let path = out.map_or_else(|| ws.keywords(), Path::to_path_buf);
    table.save(&path)?;
    let manifest_path = if path == ws.keywords() {
        ws.keywords_manifest()
    } else {
        let mut p = path.clone().into_os_string();
        p.push(".manifest.toml");
        PathBuf::from(p)
    };
    let manifest = KeywordsManifest {
        k: cfg.keywords.k,
        corpus_hash: file_hash(&cfg.paths.intents_path)?,
        corpus_examples: corpus.len(),
        table_hash: table.hash(),
    };
    write_toml(&manifest_path, &manifest)?;
    if out.is_some() && path != ws.keywords() {
        // later stages read the work-directory copy
        table.save(&ws.keywords())?;
        write_toml(&ws.keywords_manifest(), &manifest)?;
    }
    Ok((table, path))
}

pub fn load_keywords(cfg: &RunConfig) -> Result<KeywordTable> {
    let path = Workspace::new(&cfg.paths.work_dir).keywords();
    require(&path, "extract-keywords")?;
    KeywordTable::load(&path)
}

// ---- train-classifier -----------------------------------------------------

pub fn train_classifier_stage(cfg: &RunConfig) -> Result<ClassifierManifest> {
    cfg.validate()?;
    require_input(&cfg.paths.intents_path)?;
    let ws = Workspace::new(&cfg.paths.work_dir);
    let corpus = load_intent_corpus(&cfg.paths.intents_path)?;
    let (clf, report) = train_classifier(&corpus, &cfg.classifier, cfg.seed)?;
    let manifest = ClassifierManifest {
        seed: cfg.seed,
        vocab_hash: clf.vocab.hash(),
        parameter_count: clf.params.scalar_count(),
        train_examples: report.train_examples,
        heldout_examples: report.heldout_examples,
        heldout_accuracy: report.heldout_accuracy,
        config: cfg.classifier.clone(),
    };
    clf.save(&ws.classifier_prefix(), &manifest)?;
    Ok(manifest)
}

pub fn load_classifier(cfg: &RunConfig) -> Result<IntentClassifier> {
    Ok(IntentClassifier::load(&Workspace::new(&cfg.paths.work_dir).classifier_prefix())?.0)
}

// ---- prepare-data -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataManifest {
    pub seed: u64,
    pub train_examples: usize,
    pub valid_examples: usize,
    pub test_examples: usize,
    pub malformed_rows: usize,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub classifier_vocab_hash: String,
    pub train_fraction: f64,
}

fn subsample(examples: Vec<DialogueExample>, fraction: f64, seed: u64) -> Vec<DialogueExample> {
    if fraction >= 1.0 {
        return examples;
    }
    let mut convs: Vec<&str> = Vec::new();
    for e in &examples {
        if convs.last() != Some(&e.conversation_id.as_str())
            && !convs.contains(&e.conversation_id.as_str())
        {
            convs.push(&e.conversation_id);
        }
    }
    let mut r = rng::stream(seed, Stream::Subsample);
    let keep: HashSet<String> = convs
        .into_iter()
        .filter(|_| r.random::<f64>() < fraction)
        .map(String::from)
        .collect();
    examples
        .into_iter()
        .filter(|e| keep.contains(&e.conversation_id))
        .collect()
}

fn write_recognition(path: &Path, rows: &[IntentDistribution]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.0.iter().map(|p| format!("{p:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn read_recognition(path: &Path) -> Result<Vec<IntentDistribution>> {
    require(path, "prepare-data")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let p: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("recognition cache", format!("line {}: {e}", i + 1)))?;
            let sum: f64 = p.iter().sum();
            if p.len() != NUM_INTENTS || sum <= 0.0 {
                return Err(Error::format(
                    "recognition cache",
                    format!("line {}", i + 1),
                ));
            }
            // renormalize the printed values exactly
            IntentDistribution::new(p.iter().map(|x| x / sum).collect())
        })
        .collect()
}

/// Normalizes the dialogue corpus, builds the vocabulary and caches the
/// recognition distribution of every response.
pub fn prepare_data_stage(cfg: &RunConfig) -> Result<DataManifest> {
    cfg.validate()?;
    for split in Split::ALL {
        require_input(
            &cfg.paths
                .dialogues_dir
                .join(format!("{}.csv", split.name())),
        )?;
    }
    let ws = Workspace::new(&cfg.paths.work_dir);
    let classifier = load_classifier(cfg)?;
    let mut splits = Vec::new();
    let mut malformed = 0;
    for split in Split::ALL {
        let loaded = load_dialogues(&cfg.paths.dialogues_dir, split)?;
        malformed += loaded.malformed_rows;
        let examples = if split == Split::Train {
            subsample(loaded.examples, cfg.data.train_fraction, cfg.seed)
        } else {
            loaded.examples
        };
        if examples.is_empty() {
            return Err(Error::Empty("dialogue split"));
        }
        splits.push((split, examples));
    }
    let train = &splits[0].1;
    let vocab = Vocabulary::build(
        train.iter().flat_map(|e| {
            e.context
                .iter()
                .map(|u| u.tokens.clone())
                .chain(std::iter::once(e.response.tokens.clone()))
        }),
        cfg.data.max_vocab,
        cfg.data.min_freq,
    )?;
    vocab.save(&ws.vocab())?;
    for (split, examples) in &splits {
        write_jsonl(&ws.split_data(*split), examples)?;
        let mut rows = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(64) {
            let ids: Vec<Vec<usize>> = chunk
                .iter()
                .map(|e| classifier.encode_tokens(&e.response.tokens))
                .collect();
            let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
            rows.extend(classifier.classify_batch(&refs)?);
        }
        write_recognition(&ws.recognition(*split), &rows)?;
    }
    let manifest = DataManifest {
        seed: cfg.seed,
        train_examples: splits[0].1.len(),
        valid_examples: splits[1].1.len(),
        test_examples: splits[2].1.len(),
        malformed_rows: malformed,
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
        classifier_vocab_hash: classifier.vocab.hash(),
        train_fraction: cfg.data.train_fraction,
    };
    write_toml(&ws.data_manifest(), &manifest)?;
    Ok(manifest)
}

/// Prepared split with its cached recognition distributions.
pub struct PreparedSplit {
    pub dialogues: Vec<DialogueExample>,
    pub recognition: Vec<IntentDistribution>,
}

pub fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    let path = Workspace::new(&cfg.paths.work_dir).vocab();
    require(&path, "prepare-data")?;
    Vocabulary::load(&path)
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<PreparedSplit> {
    let ws = Workspace::new(&cfg.paths.work_dir);
    let path = ws.split_data(split);
    require(&path, "prepare-data")?;
    let dialogues = read_jsonl(&path)?;
    let recognition = read_recognition(&ws.recognition(split))?;
    if recognition.len() != dialogues.len() {
        return Err(Error::format(
            "recognition cache",
            "row count differs from the split",
        ));
    }
    Ok(PreparedSplit {
        dialogues,
        recognition,
    })
}

pub fn training_examples(split: &PreparedSplit, vocab: &Vocabulary) -> Vec<TrainingExample> {
    split
        .dialogues
        .iter()
        .zip(&split.recognition)
        .map(|(d, r)| TrainingExample {
            context: d.context_ids(vocab),
            response: d.response_ids(vocab),
            emotion: d.emotion,
            recognition: r.clone(),
        })
        .filter(|e| !e.context.is_empty())
        .collect()
}

// ---- train -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub seed: u64,
    pub vocab_hash: String,
    pub keyword_hash: String,
    pub parameter_count: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub ablations: Ablations,
    pub model: crate::model::ModelConfig,
    pub training: crate::training::TrainingConfig,
}

/// Overwrites embedding rows with vectors from a whitespace-separated text
/// file (`token v1 v2 ...`). Returns the number of rows replaced.
pub fn load_word_vectors(model: &mut EmphiModel, vocab: &Vocabulary, path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dim = model.config.embedding_dim;
    let id = model.embedding_param();
    let mut replaced = 0;
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let Some(row) = vocab.id(token) else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("word vectors", format!("line {}: {e}", lineno + 1)))?;
        if values.len() != dim {
            return Err(Error::format(
                "word vectors",
                format!(
                    "line {} has {} values, expected {dim}",
                    lineno + 1,
                    values.len()
                ),
            ));
        }
        model
            .params
            .get_mut(id)
            .row_mut(row)
            .assign(&ndarray::Array1::from(values));
        replaced += 1;
    }
    Ok(replaced)
}

fn keyword_ids(table: &KeywordTable, vocab: &Vocabulary) -> Vec<Vec<usize>> {
    table.keyword_ids(vocab)
}

/// Trains the generator and writes its checkpoint, manifest and log.
pub fn train_stage(cfg: &RunConfig) -> Result<(ModelManifest, Vec<EpochRecord>)> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.paths.work_dir);
    let vocab = load_vocab(cfg)?;
    let table = load_keywords(cfg)?;
    let train_split = load_split(cfg, Split::Train)?;
    let valid_split = load_split(cfg, Split::Valid)?;
    let train_data = training_examples(&train_split, &vocab);
    let valid_data = training_examples(&valid_split, &vocab);

    let mut tcfg = cfg.training.clone();
    tcfg.seed = cfg.seed;
    let ablations = tcfg.ablations;
    let model_cfg = crate::model::ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    };
    let mut model = EmphiModel::new(
        model_cfg,
        ablations,
        &mut rng::stream(cfg.seed, Stream::ModelInit),
    )?;
    let kw = keyword_ids(&table, &vocab);
    model.set_keyword_ids(kw.clone())?;
    if let Some(p) = &cfg.paths.vectors {
        let n = load_word_vectors(&mut model, &vocab, p)?;
        log::info!("initialized {n} embedding rows from {}", p.display());
    }
    log::info!("generator has {} parameters", model.parameter_count());

    let mut log_lines = String::new();
    let outcome = training::train(
        &mut model,
        &train_data,
        &valid_data,
        &KeywordIds::new(kw),
        &tcfg,
        |record| {
            log::info!(
                "epoch {} train total {:.4} (l1 {:.4}){}",
                record.epoch,
                record.train.total,
                record.train.l1,
                record
                    .valid
                    .as_ref()
                    .map_or(String::new(), |v| format!(", valid total {:.4}", v.total))
            );
            log_lines.push_str(&serde_json::to_string(record).expect("record serializes"));
            log_lines.push('\n');
            true
        },
    )?;
    write_atomic(&ws.train_log(&ablations), log_lines.as_bytes())?;
    checkpoint::save_tensors(&ws.model_checkpoint(&ablations), &model.params.to_tensors())?;
    let manifest = ModelManifest {
        seed: cfg.seed,
        vocab_hash: vocab.hash(),
        keyword_hash: table.hash(),
        parameter_count: model.parameter_count(),
        epochs_run: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        ablations,
        model: model.config.clone(),
        training: tcfg,
    };
    write_toml(&ws.model_manifest(&ablations), &manifest)?;
    Ok((manifest, outcome.log))
}

/// Loads a trained generator, checking it against the current vocabulary
/// and keyword table.
pub fn load_model(
    cfg: &RunConfig,
    ablations: &Ablations,
) -> Result<(EmphiModel, Vocabulary, ModelManifest)> {
    let ws = Workspace::new(&cfg.paths.work_dir);
    let manifest: ModelManifest = read_toml(&ws.model_manifest(ablations), "train")?;
    require(&ws.model_checkpoint(ablations), "train")?;
    let vocab = load_vocab(cfg)?;
    if vocab.hash() != manifest.vocab_hash {
        return Err(Error::format(
            "checkpoint",
            "vocabulary changed since training; rerun `train`",
        ));
    }
    let table = load_keywords(cfg)?;
    if table.hash() != manifest.keyword_hash {
        return Err(Error::format(
            "checkpoint",
            "keyword table changed since training; rerun `train`",
        ));
    }
    let mut model = EmphiModel::new(
        manifest.model.clone(),
        manifest.ablations,
        &mut rng::stream(manifest.seed, Stream::ModelInit),
    )?;
    model
        .params
        .load_tensors(checkpoint::load_tensors(&ws.model_checkpoint(ablations))?)?;
    model.set_keyword_ids(keyword_ids(&table, &vocab))?;
    Ok((model, vocab, manifest))
}

// ---- evaluate ----------------------------------------------------------------

/// Generates for the test split and writes the metric report plus the
/// generated and human response files.
pub fn evaluate_stage(cfg: &RunConfig, ablations: &Ablations) -> Result<EvalReport> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.paths.work_dir);
    let (model, vocab, _) = load_model(cfg, ablations)?;
    let classifier = load_classifier(cfg)?;
    let test = load_split(cfg, Split::Test)?;
    let limit = cfg.eval.max_cases.unwrap_or(usize::MAX);
    let cases: Vec<EvalCase> = test
        .dialogues
        .iter()
        .take(limit)
        .map(|d| EvalCase {
            context: d.context_ids(&vocab),
            reference: d.response.tokens.clone(),
        })
        .collect();
    let generator = ModelGenerator {
        model: &model,
        vocab: &vocab,
        max_len: cfg.eval.max_response_len,
    };
    let report = evalsuite::evaluate(&generator, &classifier, &cases, cfg.eval.samples, cfg.seed)?;
    write_atomic(&ws.eval_report(ablations), report.to_text().as_bytes())?;
    write_atomic(
        &ws.eval_responses(ablations),
        evalsuite::format_responses(&report.responses).as_bytes(),
    )?;
    let humans: Vec<Vec<Vec<String>>> = cases.iter().map(|c| vec![c.reference.clone()]).collect();
    write_atomic(
        &ws.human_responses(),
        evalsuite::format_responses(&humans).as_bytes(),
    )?;
    Ok(report)
}

// ---- audit-bias -----------------------------------------------------------------

pub fn audit_bias_stage(
    cfg: &RunConfig,
    model_file: &Path,
    human_file: &Path,
) -> Result<AuditReport> {
    require_input(model_file)?;
    require_input(human_file)?;
    let classifier = load_classifier(cfg)?;
    let model = evalsuite::read_responses(model_file)?;
    let human = evalsuite::read_responses(human_file)?;
    let report = evalsuite::audit_bias(&model, &human, &classifier)?;
    write_atomic(
        &Workspace::new(&cfg.paths.work_dir).audit_report(),
        report.to_text().as_bytes(),
    )?;
    Ok(report)
}

// ---- chat -----------------------------------------------------------------------

/// Interactive probe over trained artifacts.
pub struct ChatSession {
    pub model: EmphiModel,
    pub vocab: Vocabulary,
    pub classifier: IntentClassifier,
    pub max_len: usize,
    rng: rng::Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    /// All nine intents, most probable first.
    pub intents: Vec<(IntentLabel, f64)>,
    pub emotion: EmotionLabel,
    /// Intent the response was conditioned on.
    pub intent: IntentLabel,
    pub response: String,
    /// Classifier label of the generated response.
    pub response_intent: Option<IntentLabel>,
}

impl ChatReply {
    pub fn to_text(&self) -> String {
        let mut out = String::from("intent distribution:\n");
        for (i, p) in &self.intents {
            writeln!(out, "  {:<14} {p:.4}", i.name()).unwrap();
        }
        writeln!(out, "emotion: {}", self.emotion).unwrap();
        writeln!(out, "conditioned on: {}", self.intent).unwrap();
        writeln!(out, "response: {}", self.response).unwrap();
        match self.response_intent {
            Some(l) => writeln!(out, "response intent: {l}").unwrap(),
            None => writeln!(out, "response intent: -").unwrap(),
        }
        out
    }
}

impl ChatSession {
    pub fn open(cfg: &RunConfig, ablations: &Ablations) -> Result<Self> {
        let (model, vocab, _) = load_model(cfg, ablations)?;
        let classifier = load_classifier(cfg)?;
        Ok(ChatSession {
            model,
            vocab,
            classifier,
            max_len: cfg.eval.max_response_len,
            rng: rng::stream(cfg.seed, Stream::Chat),
        })
    }

    pub fn reply(&mut self, utterance: &str, intent: Option<IntentLabel>) -> Result<ChatReply> {
        let tokens = tokenize(utterance);
        if tokens.is_empty() {
            return Err(Error::Empty("utterance"));
        }
        let mut ids = self.vocab.encode(&tokens);
        if ids.len() > MAX_CONTEXT_TOKENS {
            ids.drain(..ids.len() - MAX_CONTEXT_TOKENS);
        }
        let enc = self.model.encode_context(&ids)?;
        let prior = self.model.prior_intent(&enc.final_state);
        let mut intents: Vec<(IntentLabel, f64)> =
            IntentLabel::all().map(|i| (i, prior.0[i.id()])).collect();
        intents.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let out = self
            .model
            .generate(&ids, intent, self.max_len, 1, &mut self.rng)?
            .remove(0);
        let words = self.vocab.decode_clean(&out.tokens)?;
        let response_intent = if words.is_empty() {
            None
        } else {
            Some(self.classifier.recognize_tokens(&words)?)
        };
        Ok(ChatReply {
            intents,
            emotion: out.emotion,
            intent: out.intent,
            response: words.join(" "),
            response_intent,
        })
    }
}
