use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::vocab::{Vocabulary, BOS, EOS};
use super::{MAX_CONTEXT_TOKENS, MAX_RESPONSE_TOKENS};
use crate::error::{Error, Result};
use crate::labels::EmotionLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speaker {
    Speaker,
    Listener,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Utterance {
            speaker,
            text,
            tokens,
        }
    }
}

/// One listener turn with every preceding turn as context.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueExample {
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub emotion: EmotionLabel,
    pub conversation_id: String,
}

impl DialogueExample {
    /// Flattened context ids: turns joined by EOS, keeping the most recent
    /// `MAX_CONTEXT_TOKENS` ids.
    pub fn context_ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        let mut ids = Vec::new();
        for (i, u) in self.context.iter().enumerate() {
            if i > 0 {
                ids.push(EOS);
            }
            ids.extend(vocab.encode(&u.tokens));
        }
        if ids.len() > MAX_CONTEXT_TOKENS {
            ids.drain(..ids.len() - MAX_CONTEXT_TOKENS);
        }
        ids
    }

    /// Response ids capped at `MAX_RESPONSE_TOKENS`, without BOS/EOS.
    pub fn response_ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        let mut ids = vocab.encode(&self.response.tokens);
        ids.truncate(MAX_RESPONSE_TOKENS);
        ids
    }

    /// Teacher-forcing pair: decoder inputs `[BOS, x..]`, targets `[x.., EOS]`.
    pub fn decoder_io(&self, vocab: &Vocabulary) -> (Vec<usize>, Vec<usize>) {
        let body = self.response_ids(vocab);
        let mut inputs = vec![BOS];
        inputs.extend(&body);
        let mut targets = body;
        targets.push(EOS);
        (inputs, targets)
    }

    pub fn to_record(&self) -> NormalizedRecord {
        NormalizedRecord {
            context: self.context.iter().map(|u| u.text.clone()).collect(),
            response: self.response.text.clone(),
            emotion: self.emotion.name().to_string(),
            conv_id: self.conversation_id.clone(),
        }
    }

    /// Rebuilds an example; context turns alternate so that the last one is
    /// speaker-side.
    pub fn from_record(r: &NormalizedRecord) -> Result<Self> {
        if r.context.is_empty() {
            return Err(Error::format("dialogue record", "empty context"));
        }
        let n = r.context.len();
        let context = r
            .context
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let speaker = if (n - 1 - i).is_multiple_of(2) {
                    Speaker::Speaker
                } else {
                    Speaker::Listener
                };
                Utterance::new(speaker, t.clone())
            })
            .collect();
        Ok(DialogueExample {
            context,
            response: Utterance::new(Speaker::Listener, r.response.clone()),
            emotion: EmotionLabel::from_name(&r.emotion)?,
            conversation_id: r.conv_id.clone(),
        })
    }
}

/// The normalized on-disk record, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizedRecord {
    pub context: Vec<String>,
    pub response: String,
    pub emotion: String,
    pub conv_id: String,
}

#[derive(Debug, Clone)]
pub struct LoadedDialogues {
    pub examples: Vec<DialogueExample>,
    pub malformed_rows: usize,
}

struct Row {
    idx: u32,
    emotion: EmotionLabel,
    text: String,
}

/// Reads `<dir>/<split>.csv` in the published comma-separated layout
/// (`conv_id,utterance_idx,context,prompt,speaker_idx,utterance,...`, commas
/// inside text escaped as `_comma_`).
///
/// Odd utterance indices are speaker turns, even ones listener turns; every
/// listener turn becomes one example. Malformed rows are skipped and counted.
pub fn load_dialogues(dir: &Path, split: Split) -> Result<LoadedDialogues> {
    let path = dir.join(format!("{}.csv", split.name()));
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut malformed = 0usize;
    let mut order: Vec<String> = Vec::new();
    let mut convs: HashMap<String, Vec<Row>> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("conv_id") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line) {
            Some((conv, row)) => {
                let entry = convs.entry(conv.clone()).or_insert_with(|| {
                    order.push(conv);
                    Vec::new()
                });
                entry.push(row);
            }
            None => malformed += 1,
        }
    }
    if malformed > 0 {
        log::warn!("{}: skipped {malformed} malformed row(s)", path.display());
    }

    let mut examples = Vec::new();
    for conv in order {
        let mut rows = convs.remove(&conv).unwrap_or_default();
        rows.sort_by_key(|r| r.idx);
        rows.dedup_by_key(|r| r.idx);
        let emotion = rows[0].emotion;
        let mut history: Vec<Utterance> = Vec::new();
        for row in rows {
            let speaker = if row.idx % 2 == 1 {
                Speaker::Speaker
            } else {
                Speaker::Listener
            };
            let utt = Utterance::new(speaker, row.text);
            let ends_with_speaker = history
                .last()
                .is_some_and(|u| u.speaker == Speaker::Speaker);
            if speaker == Speaker::Listener && ends_with_speaker {
                examples.push(DialogueExample {
                    context: history.clone(),
                    response: utt.clone(),
                    emotion,
                    conversation_id: conv.clone(),
                });
            }
            history.push(utt);
        }
    }
    Ok(LoadedDialogues {
        examples,
        malformed_rows: malformed,
    })
}

fn parse_row(line: &str) -> Option<(String, Row)> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() < 6 {
        return None;
    }
    let conv = fields[0].trim();
    if conv.is_empty() {
        return None;
    }
    let idx: u32 = fields[1].trim().parse().ok()?;
    if idx == 0 {
        return None;
    }
    let emotion = EmotionLabel::from_name(fields[2]).ok()?;
    let text = fields[5].replace("_comma_", ",");
    if tokenize(&text).is_empty() {
        return None;
    }
    Some((conv.to_string(), Row { idx, emotion, text }))
}

pub fn write_jsonl(path: &Path, examples: &[DialogueExample]) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, &ex.to_record())
            .map_err(|e| Error::format("dialogue record", e.to_string()))?;
        buf.write_all(b"\n").expect("write to Vec");
    }
    crate::checkpoint::write_atomic(path, &buf)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DialogueExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let rec: NormalizedRecord = serde_json::from_str(l)
                .map_err(|e| Error::format("dialogue record", format!("line {}: {e}", i + 1)))?;
            DialogueExample::from_record(&rec)
        })
        .collect()
}
