//! Deterministic synthetic corpora for tests, demos and smoke runs.
//!
//! Every intent owns a disjoint "core" of six words. Listener responses mix
//! two or three core words of their intent with shared filler words, so a
//! classifier or keyword extractor can recover the intent while the surface
//! form still varies. Speaker turns mention an emotion name and a topic word.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::checkpoint::write_atomic;
use crate::corpus::Vocabulary;
use crate::corpus::{tokenize, DialogueExample, IntentExample, Speaker, Split, Utterance};
use crate::error::Result;
use crate::intent_classifier::IntentRecognizer;
use crate::labels::{EmotionLabel, IntentLabel, NUM_EMOTIONS, NUM_INTENTS};
use crate::model::{IntentDistribution, ModelConfig};
use crate::rng::{self, Rng, Stream};
use crate::training::{KeywordIds, TrainingExample};

/// Disjoint keyword cores, indexed by intent id.
pub const INTENT_CORES: [[&str; 6]; NUM_INTENTS] = [
    [
        "agree",
        "totally",
        "exactly",
        "true",
        "indeed",
        "absolutely",
    ],
    ["understand", "see", "sense", "okay", "gotcha", "noted"],
    ["proud", "strong", "capable", "keep", "going", "believe"],
    ["worry", "alright", "better", "soon", "pass", "fine"],
    ["sorry", "hear", "terrible", "awful", "unfortunate", "sad"],
    ["maybe", "should", "try", "recommend", "perhaps", "consider"],
    ["wonder", "curious", "tell", "happened", "ask", "wondering"],
    ["hope", "wish", "luck", "best", "congratulations", "enjoy"],
    ["weather", "lunch", "coffee", "weekend", "music", "movie"],
];

const FILLERS: [&str; 12] = [
    "i", "you", "it", "that", "is", "so", "really", "the", "this", "am", "to", "a",
];

const SPEAKER_OPENERS: [&str; 4] = ["i feel", "i was", "today i felt", "lately i am"];

/// A fixed keyword sentence per intent.
pub fn canonical_response(intent: IntentLabel) -> String {
    let c = INTENT_CORES[intent.id()];
    format!("i {} {} that {}", c[0], c[1], c[2])
}

fn topic(i: usize) -> String {
    format!("topic{i}")
}

fn intent_sentence(rng: &mut Rng, intent: IntentLabel) -> String {
    let core = INTENT_CORES[intent.id()];
    let n_core = rng.random_range(2..=3);
    let n_fill = rng.random_range(2..=4);
    let mut words: Vec<&str> = core.choose_multiple(rng, n_core).copied().collect();
    words.extend(FILLERS.choose_multiple(rng, n_fill).copied());
    words.shuffle(rng);
    words.join(" ")
}

fn separable_sentence(rng: &mut Rng, intent: IntentLabel) -> String {
    let core = INTENT_CORES[intent.id()];
    let n = rng.random_range(3..=5);
    (0..n)
        .map(|_| *core.choose(rng).expect("nonempty"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Balanced corpus of core-plus-filler sentences.
pub fn intent_corpus(per_class: usize, seed: u64) -> Vec<IntentExample> {
    let mut rng = rng::substream(seed, Stream::Fixtures, 0);
    let mut out = Vec::with_capacity(per_class * NUM_INTENTS);
    for _ in 0..per_class {
        for intent in IntentLabel::all() {
            out.push(IntentExample {
                text: intent_sentence(&mut rng, intent),
                intent,
            });
        }
    }
    out
}

/// Balanced corpus where each class uses only its own core words.
pub fn separable_intent_corpus(per_class: usize, seed: u64) -> Vec<IntentExample> {
    let mut rng = rng::substream(seed, Stream::Fixtures, 1);
    let mut out = Vec::with_capacity(per_class * NUM_INTENTS);
    for _ in 0..per_class {
        for intent in IntentLabel::all() {
            out.push(IntentExample {
                text: separable_sentence(&mut rng, intent),
                intent,
            });
        }
    }
    out
}

/// Writes an intent corpus as a `text,label` CSV.
pub fn write_intent_csv(path: &Path, corpus: &[IntentExample]) -> Result<()> {
    let mut body = String::from("text,label\n");
    for ex in corpus {
        writeln!(body, "{},{}", ex.text, ex.intent.name()).expect("write to String");
    }
    write_atomic(path, body.as_bytes())
}

/// Recognizes the intent whose core words occur most often; ties go to the
/// lower id and responses without core words are Neutral.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoreOracle;

impl IntentRecognizer for CoreOracle {
    fn recognize_tokens(&self, tokens: &[String]) -> Result<IntentLabel> {
        let mut counts = [0usize; NUM_INTENTS];
        for t in tokens {
            for (i, core) in INTENT_CORES.iter().enumerate() {
                if core.contains(&t.as_str()) {
                    counts[i] += 1;
                }
            }
        }
        let max = *counts.iter().max().expect("nine classes");
        if max == 0 {
            return IntentLabel::from_name("Neutral");
        }
        IntentLabel::new(counts.iter().position(|&c| c == max).expect("max exists"))
    }
}

struct Turn {
    speaker: String,
    listener: String,
    emotion: EmotionLabel,
}

fn dialogue_turn(rng: &mut Rng, topics: usize) -> Turn {
    let emotion = EmotionLabel::new(rng.random_range(0..NUM_EMOTIONS)).expect("in range");
    let intent = IntentLabel::new(rng.random_range(0..NUM_INTENTS)).expect("in range");
    let t = topic(rng.random_range(0..topics));
    Turn {
        speaker: format!("{} {} about my {t}", opener(rng), emotion.name()),
        listener: format!("{} {t}", intent_sentence(rng, intent)),
        emotion,
    }
}

fn opener(rng: &mut Rng) -> &'static str {
    SPEAKER_OPENERS.choose(rng).expect("nonempty")
}

/// Writes `train.csv`, `valid.csv` and `test.csv` in the upstream
/// dialogue-corpus layout. `n_convs` conversations go to training and a
/// fifth as many (at least two) to each of the other splits.
pub fn write_dialogue_csvs(dir: &Path, seed: u64, n_convs: usize) -> Result<()> {
    let held = (n_convs / 5).max(2);
    for (s, split) in Split::ALL.into_iter().enumerate() {
        let mut rng = rng::substream(seed, Stream::Fixtures, 10 + s as u32);
        let count = if split == Split::Train { n_convs } else { held };
        let mut body = String::from(
            "conv_id,utterance_idx,context,prompt,speaker_idx,utterance,selfeval,tags\n",
        );
        for c in 0..count {
            let conv = format!("hit:{}_{c}_conv:{}", split.name(), 2 * c);
            let turns = rng.random_range(1..=2);
            let first = dialogue_turn(&mut rng, 40);
            let emotion = first.emotion;
            let mut idx = 1;
            let mut lines = vec![first.speaker, first.listener];
            for _ in 1..turns {
                let next = dialogue_turn(&mut rng, 40);
                lines.push(next.speaker);
                lines.push(next.listener);
            }
            for (i, text) in lines.iter().enumerate() {
                let text = if i == 0 && c % 3 == 0 {
                    format!("{text}_comma_ honestly")
                } else {
                    text.clone()
                };
                writeln!(
                    body,
                    "{conv},{idx},{},prompt_comma_ text,{},{text},,",
                    emotion.name(),
                    i % 2
                )
                .expect("write to String");
                idx += 1;
            }
        }
        write_atomic(&dir.join(format!("{}.csv", split.name())), body.as_bytes())?;
    }
    Ok(())
}

/// A dialogue example whose listener intent is known by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDialogue {
    pub example: DialogueExample,
    pub intent: IntentLabel,
}

fn labeled(
    speaker: String,
    listener: String,
    emotion: EmotionLabel,
    intent: IntentLabel,
    id: usize,
) -> LabeledDialogue {
    LabeledDialogue {
        example: DialogueExample {
            context: vec![Utterance::new(Speaker::Speaker, speaker)],
            response: Utterance::new(Speaker::Listener, listener),
            emotion,
            conversation_id: format!("synthetic:{id}"),
        },
        intent,
    }
}

/// Toy corpus of `n` single-turn dialogues drawn from roughly
/// 300 distinct tokens.
pub fn toy_dialogues(n: usize, seed: u64) -> Vec<LabeledDialogue> {
    let mut rng = rng::substream(seed, Stream::Fixtures, 20);
    (0..n)
        .map(|i| {
            let emotion = EmotionLabel::new(rng.random_range(0..NUM_EMOTIONS)).expect("in range");
            let intent = IntentLabel::new(i % NUM_INTENTS).expect("in range");
            let topics: Vec<String> = (0..3).map(|_| topic(rng.random_range(0..200))).collect();
            let speaker = format!(
                "{} {} about my {} and {}",
                opener(&mut rng),
                emotion.name(),
                topics[0],
                topics[1]
            );
            let listener = format!("{} {}", intent_sentence(&mut rng, intent), topics[2]);
            labeled(speaker, listener, emotion, intent, i)
        })
        .collect()
}

/// `per_intent` template responses for each intent, answering a small set of
/// shared contexts. Responses are pure keyword-core sentences of their intent.
pub fn templated_dialogues(per_intent: usize, seed: u64) -> Vec<LabeledDialogue> {
    let mut rng = rng::substream(seed, Stream::Fixtures, 30);
    let contexts: Vec<(String, EmotionLabel)> = (0..4)
        .map(|i| {
            let e = EmotionLabel::new(i * 7).expect("in range");
            (format!("i feel {} about my {}", e.name(), topic(i)), e)
        })
        .collect();
    let mut out = Vec::with_capacity(per_intent * NUM_INTENTS);
    for j in 0..per_intent {
        for intent in IntentLabel::all() {
            let (ctx, emotion) = contexts[(j + intent.id()) % contexts.len()].clone();
            let core = INTENT_CORES[intent.id()];
            let mut words = vec![core[0]];
            words.extend(core[1..].choose_multiple(&mut rng, 2).copied());
            let listener = words.join(" ");
            out.push(labeled(ctx, listener, emotion, intent, out.len()));
        }
    }
    out
}

/// Token sequences of the given dialogues' contexts and responses.
pub fn all_tokens(dialogues: &[LabeledDialogue]) -> Vec<Vec<String>> {
    dialogues
        .iter()
        .flat_map(|d| {
            let mut v: Vec<Vec<String>> =
                d.example.context.iter().map(|u| u.tokens.clone()).collect();
            v.push(d.example.response.tokens.clone());
            v
        })
        .collect()
}

/// Recognition distribution with `confidence` on `intent` and the rest
/// spread evenly.
pub fn soft_label(intent: IntentLabel, confidence: f64) -> IntentDistribution {
    let mut p = vec![(1.0 - confidence) / (NUM_INTENTS - 1) as f64; NUM_INTENTS];
    p[intent.id()] = confidence;
    IntentDistribution(ndarray::Array1::from(p))
}

/// Training examples whose recognition puts 0.9 on the constructed intent.
pub fn training_examples(
    dialogues: &[LabeledDialogue],
    vocab: &Vocabulary,
) -> Vec<TrainingExample> {
    dialogues
        .iter()
        .map(|d| TrainingExample {
            context: d.example.context_ids(vocab),
            response: d.example.response_ids(vocab),
            emotion: d.example.emotion,
            recognition: soft_label(d.intent, 0.9),
        })
        .collect()
}

/// Keyword ids of the intent cores.
pub fn core_keyword_ids(vocab: &Vocabulary) -> KeywordIds {
    KeywordIds::new(
        INTENT_CORES
            .iter()
            .map(|core| core.iter().filter_map(|w| vocab.id(w)).collect())
            .collect(),
    )
}

/// Small generator dimensions for fast tests.
pub fn tiny_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        embedding_dim: 16,
        encoder_hidden: 16,
        encoder_layers: 1,
        decoder_hidden: 24,
        decoder_layers: 1,
        latent_dim: 12,
        ffn_hidden: 16,
        attention_dim: 16,
        copy_mask: false,
    }
}

/// Number of distinct tokens across the given sequences.
pub fn distinct_tokens(seqs: &[Vec<String>]) -> usize {
    seqs.iter()
        .flatten()
        .collect::<std::collections::HashSet<_>>()
        .len()
}

/// Tokens of a text, for oracle checks.
pub fn tokens_of(text: &str) -> Vec<String> {
    tokenize(text)
}
