//! Nine-way response intent classifier: a bidirectional GRU whose
//! mean-pooled states feed a two-layer head. It serves as the recognition
//! network during generator training and as the audit classifier.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::checkpoint;
use crate::corpus::{tokenize, IntentExample, Vocabulary};
use crate::error::{Error, Result};
use crate::labels::{IntentLabel, NUM_INTENTS};
use crate::model::IntentDistribution;
use crate::nn::{normal, Adam, BiGru, Ffn};
use crate::rng::{self, Stream};

/// Anything that can assign an intent to a tokenized response.
pub trait IntentRecognizer {
    fn recognize_tokens(&self, tokens: &[String]) -> Result<IntentLabel>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub heldout_fraction: f64,
    pub max_tokens: usize,
    pub max_vocab: usize,
    pub min_freq: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            embedding_dim: 300,
            hidden: 300,
            ffn_hidden: 300,
            epochs: 15,
            batch_size: 32,
            learning_rate: 1e-3,
            heldout_fraction: 0.1,
            max_tokens: 64,
            max_vocab: 20_000,
            min_freq: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntentClassifier {
    pub config: ClassifierConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    embedding: ParamId,
    encoder: BiGru,
    head: Ffn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub epoch_losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub heldout_accuracy: f64,
    pub train_examples: usize,
    pub heldout_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierManifest {
    pub seed: u64,
    pub vocab_hash: String,
    pub parameter_count: usize,
    pub train_examples: usize,
    pub heldout_examples: usize,
    pub heldout_accuracy: f64,
    pub config: ClassifierConfig,
}

impl IntentClassifier {
    pub fn new(config: ClassifierConfig, vocab: Vocabulary, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Stream::ClassifierInit);
        let mut params = ParamStore::new();
        let embedding = params.add(
            "embedding",
            normal(&mut rng, vocab.len(), config.embedding_dim, 1.0),
        );
        let encoder = BiGru::new(
            &mut params,
            "encoder",
            config.embedding_dim,
            config.hidden,
            1,
            &mut rng,
        );
        let head = Ffn::new(
            &mut params,
            "head",
            2 * config.hidden,
            config.ffn_hidden,
            NUM_INTENTS,
            &mut rng,
        );
        IntentClassifier {
            config,
            vocab,
            params,
            embedding,
            encoder,
            head,
        }
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        self.encode_tokens(&tokenize(text))
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = self.vocab.encode(tokens);
        ids.truncate(self.config.max_tokens);
        ids
    }

    /// Logits (`B x 9`) for a batch of nonempty id sequences.
    fn logits_graph(&self, g: &mut Graph, batch: &[&[usize]]) -> Var {
        let b = batch.len();
        let t_max = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut inputs = Vec::with_capacity(t_max);
        let mut masks = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let ids: Vec<usize> = batch
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(0))
                .collect();
            inputs.push(g.gather(self.embedding, &ids));
            masks.push(Array2::from_shape_fn((b, 1), |(r, _)| {
                if t < batch[r].len() {
                    1.0
                } else {
                    0.0
                }
            }));
        }
        let out = self.encoder.forward(g, &inputs, &masks);
        let mut pooled = None;
        for (h, m) in out.states.iter().zip(masks) {
            let m = g.constant(m);
            let term = g.mul_col(*h, m);
            pooled = Some(match pooled {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        let inv_len = g.constant(Array2::from_shape_fn((b, 1), |(r, _)| {
            1.0 / batch[r].len() as f64
        }));
        let pooled = g.mul_col(pooled.expect("nonempty"), inv_len);
        self.head.forward(g, pooled)
    }

    pub fn classify_batch(&self, batch: &[&[usize]]) -> Result<Vec<IntentDistribution>> {
        if batch.iter().any(|s| s.is_empty()) {
            return Err(Error::Empty("classifier input"));
        }
        if let Some(&id) = batch
            .iter()
            .flat_map(|s| s.iter())
            .find(|&&i| i >= self.vocab.len())
        {
            return Err(Error::TokenOutOfRange {
                id,
                size: self.vocab.len(),
            });
        }
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(&self.params);
        let logits = self.logits_graph(&mut g, batch);
        let p = g.softmax(logits);
        Ok(g.value(p)
            .rows()
            .into_iter()
            .map(|r| IntentDistribution(r.to_owned()))
            .collect())
    }

    pub fn classify(&self, ids: &[usize]) -> Result<IntentDistribution> {
        Ok(self.classify_batch(&[ids])?.remove(0))
    }

    /// Argmax intent; ties go to the lower id.
    pub fn recognize(&self, ids: &[usize]) -> Result<IntentLabel> {
        Ok(self.classify(ids)?.argmax())
    }

    pub fn classify_text(&self, text: &str) -> Result<IntentDistribution> {
        self.classify(&self.encode_text(text))
    }

    /// Fraction of `corpus` whose recognized intent equals the label.
    pub fn evaluate_accuracy(&self, corpus: &[IntentExample]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::Empty("evaluation corpus"));
        }
        let encoded: Vec<Vec<usize>> = corpus.iter().map(|e| self.encode_text(&e.text)).collect();
        let mut correct = 0usize;
        for (chunk, labels) in encoded.chunks(64).zip(corpus.chunks(64)) {
            let refs: Vec<&[usize]> = chunk.iter().map(|v| v.as_slice()).collect();
            for (d, ex) in self.classify_batch(&refs)?.iter().zip(labels) {
                correct += usize::from(d.argmax() == ex.intent);
            }
        }
        Ok(correct as f64 / corpus.len() as f64)
    }

    fn paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let with = |ext: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        (with(".ckpt"), with(".vocab"), with(".manifest.toml"))
    }

    pub fn save(&self, prefix: &Path, manifest: &ClassifierManifest) -> Result<()> {
        let (ckpt, vocab, man) = Self::paths(prefix);
        self.vocab.save(&vocab)?;
        checkpoint::save_tensors(&ckpt, &self.params.to_tensors())?;
        let text = toml::to_string(manifest).map_err(|e| Error::Config(e.to_string()))?;
        checkpoint::write_atomic(&man, text.as_bytes())
    }

    pub fn load(prefix: &Path) -> Result<(Self, ClassifierManifest)> {
        let (ckpt, vocab, man) = Self::paths(prefix);
        for p in [&ckpt, &vocab, &man] {
            if !p.is_file() {
                return Err(Error::MissingArtifact {
                    artifact: p.clone(),
                    producer: "train-classifier",
                });
            }
        }
        let text = std::fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
        let manifest: ClassifierManifest =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let vocab = Vocabulary::load(&vocab)?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(Error::format("classifier", "vocabulary hash mismatch"));
        }
        let mut clf = IntentClassifier::new(manifest.config.clone(), vocab, manifest.seed);
        clf.params.load_tensors(checkpoint::load_tensors(&ckpt)?)?;
        Ok((clf, manifest))
    }
}

impl IntentRecognizer for IntentClassifier {
    fn recognize_tokens(&self, tokens: &[String]) -> Result<IntentLabel> {
        self.recognize(&self.encode_tokens(tokens))
    }
}

/// Deterministic stratified split into (train, held-out).
pub fn split_heldout(
    corpus: &[IntentExample],
    fraction: f64,
    seed: u64,
) -> (Vec<IntentExample>, Vec<IntentExample>) {
    let mut rng = rng::stream(seed, Stream::HeldOutSplit);
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for intent in IntentLabel::all() {
        let mut group: Vec<&IntentExample> = corpus.iter().filter(|e| e.intent == intent).collect();
        group.shuffle(&mut rng);
        let n_held = ((group.len() as f64) * fraction).round() as usize;
        let n_held = n_held.min(group.len().saturating_sub(1));
        for (i, ex) in group.into_iter().enumerate() {
            if i < n_held {
                heldout.push(ex.clone());
            } else {
                train.push(ex.clone());
            }
        }
    }
    (train, heldout)
}

/// Trains with Adam on 9-way cross-entropy, halving the learning rate
/// whenever an epoch fails to improve the training loss.
pub fn train_classifier(
    corpus: &[IntentExample],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(IntentClassifier, ClassifierReport)> {
    if corpus.is_empty() {
        return Err(Error::Empty("intent corpus"));
    }
    if !(0.0..1.0).contains(&config.heldout_fraction) || config.batch_size == 0 {
        return Err(Error::Config("bad classifier settings".into()));
    }
    let (train, heldout) = split_heldout(corpus, config.heldout_fraction, seed);
    let vocab = Vocabulary::build(
        train.iter().map(|e| tokenize(&e.text)),
        config.max_vocab,
        config.min_freq,
    )?;
    let mut clf = IntentClassifier::new(config.clone(), vocab, seed);
    let data: Vec<(Vec<usize>, usize)> = train
        .iter()
        .map(|e| (clf.encode_text(&e.text), e.intent.id()))
        .filter(|(ids, _)| !ids.is_empty())
        .collect();
    if data.is_empty() {
        return Err(Error::Empty("intent corpus after tokenization"));
    }
    let mut opt = Adam::new(&clf.params, config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best = f64::INFINITY;
    let mut epoch_losses = Vec::new();
    let mut learning_rates = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::substream(
            seed,
            Stream::ClassifierShuffle,
            epoch as u32,
        ));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| data[i].0.as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data[i].1).collect();
            let (loss, mut grads) = {
                let mut g = Graph::new(&clf.params);
                let logits = clf.logits_graph(&mut g, &batch);
                let logp = g.log_softmax(logits);
                let picked = g.pick(logp, &labels);
                let sum = g.sum_all(picked);
                let loss = g.scale(sum, -1.0 / batch.len() as f64);
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        term: "intent cross-entropy",
                    });
                }
                (value, g.backward(loss))
            };
            grads.clip_global_norm(5.0);
            opt.step(&mut clf.params, &grads);
            total += loss * chunk.len() as f64;
        }
        let mean = total / data.len() as f64;
        learning_rates.push(opt.lr);
        epoch_losses.push(mean);
        log::info!("classifier epoch {epoch}: loss {mean:.4} lr {}", opt.lr);
        if mean < best {
            best = mean;
        } else {
            opt.lr *= 0.5;
        }
    }
    let heldout_accuracy = if heldout.is_empty() {
        f64::NAN
    } else {
        clf.evaluate_accuracy(&heldout)?
    };
    Ok((
        clf,
        ClassifierReport {
            epoch_losses,
            learning_rates,
            heldout_accuracy,
            train_examples: train.len(),
            heldout_examples: heldout.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn small_config() -> ClassifierConfig {
        ClassifierConfig {
            embedding_dim: 16,
            hidden: 16,
            ffn_hidden: 16,
            epochs: 12,
            batch_size: 16,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn separable_corpus_is_learned_perfectly() {
        let corpus = fixtures::separable_intent_corpus(30, 3);
        let (clf, report) = train_classifier(&corpus, &small_config(), 3).unwrap();
        assert_eq!(report.heldout_accuracy, 1.0);
        assert_eq!(report.heldout_examples, 27);
        assert_eq!(clf.evaluate_accuracy(&corpus).unwrap(), 1.0);
        let first = report.epoch_losses[0];
        let last = *report.epoch_losses.last().unwrap();
        assert!(last < first * 0.1, "{:?}", report.epoch_losses);
    }

    #[test]
    fn outputs_are_distributions_and_deterministic() {
        let corpus = fixtures::intent_corpus(12, 5);
        let cfg = ClassifierConfig {
            epochs: 2,
            ..small_config()
        };
        let (clf, _) = train_classifier(&corpus, &cfg, 5).unwrap();
        let (again, _) = train_classifier(&corpus, &cfg, 5).unwrap();
        assert_eq!(clf.params, again.params);
        let ids = clf.encode_text("i am sorry to hear that");
        let a = clf.classify(&ids).unwrap();
        assert!(a.is_valid());
        assert_eq!(a, clf.classify(&ids).unwrap());
        assert_eq!(clf.recognize(&ids).unwrap(), a.argmax());
        assert!(matches!(clf.classify(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn sympathy_sentence_on_keyword_corpus() {
        let corpus = fixtures::intent_corpus(40, 6);
        let (clf, report) = train_classifier(&corpus, &small_config(), 6).unwrap();
        assert!(report.heldout_accuracy > 0.9, "{}", report.heldout_accuracy);
        let label = clf
            .recognize(&clf.encode_text("i am sorry to hear that"))
            .unwrap();
        assert_eq!(label.name(), "Sympathizing");
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            train_classifier(&[], &small_config(), 1),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn permuted_labels_score_near_chance() {
        let corpus = fixtures::separable_intent_corpus(40, 9);
        let (clf, _) = train_classifier(&corpus, &small_config(), 9).unwrap();
        // relabel every example with a pseudo-random class
        let permuted: Vec<IntentExample> = corpus
            .iter()
            .enumerate()
            .map(|(i, e)| IntentExample {
                text: e.text.clone(),
                intent: IntentLabel::new((i * 7 + i / 9) % 9).unwrap(),
            })
            .collect();
        let acc = clf.evaluate_accuracy(&permuted).unwrap();
        assert!((acc - 1.0 / 9.0).abs() < 0.08, "{acc}");
    }

    #[test]
    fn save_and_load() {
        let corpus = fixtures::separable_intent_corpus(6, 1);
        let cfg = ClassifierConfig {
            epochs: 1,
            ..small_config()
        };
        let (clf, report) = train_classifier(&corpus, &cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("clf");
        let manifest = ClassifierManifest {
            seed: 1,
            vocab_hash: clf.vocab.hash(),
            parameter_count: clf.params.scalar_count(),
            train_examples: report.train_examples,
            heldout_examples: report.heldout_examples,
            heldout_accuracy: report.heldout_accuracy,
            config: cfg,
        };
        clf.save(&prefix, &manifest).unwrap();
        let (back, m) = IntentClassifier::load(&prefix).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(back.params, clf.params);
        assert!(matches!(
            IntentClassifier::load(&dir.path().join("nope")),
            Err(Error::MissingArtifact {
                producer: "train-classifier",
                ..
            })
        ));
    }
}
