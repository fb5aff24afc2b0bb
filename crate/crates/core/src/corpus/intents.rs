use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{IntentLabel, NUM_INTENTS};

#[derive(Debug, Clone, PartialEq)]
pub struct IntentExample {
    pub text: String,
    pub intent: IntentLabel,
}

const TEXT_COLUMNS: [&str; 5] = ["text", "utterance", "response", "sentence", "utterances"];
const LABEL_COLUMNS: [&str; 4] = ["label", "intent", "class", "labels"];

/// Reads a labeled-response file with a header row. Comma separated unless
/// the extension is `.tsv`. The text column is any of
/// `text/utterance/response/sentence`, the label column any of
/// `label/intent/class`; label names are matched case-insensitively.
///
/// Every one of the nine intents must be present. Duplicate texts are kept.
pub fn load_intent_corpus(path: &Path) -> Result<Vec<IntentExample>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let delimiter = if path.extension().is_some_and(|e| e == "tsv") {
        b'\t'
    } else {
        b','
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::format("intent corpus", e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format("intent corpus", e.to_string()))?
        .clone();
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h.trim().to_lowercase().as_str()))
    };
    let text_col = find(&TEXT_COLUMNS)
        .ok_or_else(|| Error::format("intent corpus", "no text column in header"))?;
    let label_col = find(&LABEL_COLUMNS)
        .ok_or_else(|| Error::format("intent corpus", "no label column in header"))?;

    let mut out = Vec::new();
    let mut unknown: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format("intent corpus", e.to_string()))?;
        let (Some(text), Some(label)) = (record.get(text_col), record.get(label_col)) else {
            return Err(Error::format(
                "intent corpus",
                format!("short record at {:?}", record.position()),
            ));
        };
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        match IntentLabel::from_name(label) {
            Ok(intent) => out.push(IntentExample {
                text: text.to_string(),
                intent,
            }),
            Err(_) => {
                let l = label.trim().to_string();
                if !unknown.contains(&l) {
                    unknown.push(l);
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownIntent(unknown.join(", ")));
    }
    let mut counts = [0usize; NUM_INTENTS];
    for ex in &out {
        counts[ex.intent.id()] += 1;
    }
    let missing: Vec<&str> = IntentLabel::all()
        .filter(|l| counts[l.id()] == 0)
        .map(|l| l.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingIntentClass(missing.join(", ")));
    }
    if counts.iter().any(|&c| c != counts[0]) {
        log::warn!("intent corpus is unbalanced: {counts:?}");
    }
    Ok(out)
}
