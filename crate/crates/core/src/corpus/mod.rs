//! Corpus ingestion, tokenization and vocabulary.

mod dialogues;
mod intents;
mod tokenize;
mod vocab;

pub use dialogues::{
    load_dialogues, read_jsonl, write_jsonl, DialogueExample, LoadedDialogues, NormalizedRecord,
    Speaker, Split, Utterance,
};
pub use intents::{load_intent_corpus, IntentExample};
pub use tokenize::{detokenize, tokenize};
pub use vocab::{Direction, Mapped, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

/// Most recent context tokens kept when flattening a dialogue history.
pub const MAX_CONTEXT_TOKENS: usize = 128;
/// Response tokens kept before the end-of-sequence marker.
pub const MAX_RESPONSE_TOKENS: usize = 32;
