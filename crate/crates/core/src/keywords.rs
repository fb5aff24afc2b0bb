//! Per-intent keyword lists extracted with TF-IDF over intent groups.
//!
//! Each intent's responses are concatenated into a single document (nine
//! documents in total). Term frequency is `count / document length`, inverse
//! document frequency is `ln(9 / (1 + df)) + 1`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{tokenize, IntentExample, Vocabulary};
use crate::error::{Error, Result};
use crate::labels::{IntentLabel, NUM_INTENTS};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// The shipped stop-word list.
pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTable {
    k: usize,
    lists: Vec<Vec<(String, f64)>>,
    sets: Vec<HashSet<String>>,
}

impl KeywordTable {
    pub fn from_lists(k: usize, lists: Vec<Vec<(String, f64)>>) -> Result<Self> {
        if lists.len() != NUM_INTENTS {
            return Err(Error::InvalidArgument(format!(
                "keyword table needs {NUM_INTENTS} lists, got {}",
                lists.len()
            )));
        }
        let sets = lists
            .iter()
            .map(|l| l.iter().map(|(t, _)| t.clone()).collect())
            .collect();
        Ok(KeywordTable { k, lists, sets })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn keywords(&self, intent: IntentLabel) -> &[(String, f64)] {
        &self.lists[intent.id()]
    }

    pub fn contains(&self, token: &str, intent: IntentLabel) -> bool {
        self.sets[intent.id()].contains(token)
    }

    /// True if the token is a keyword of any intent.
    pub fn contains_any(&self, token: &str) -> bool {
        self.sets.iter().any(|s| s.contains(token))
    }

    /// Keyword ids per intent under `vocab`; out-of-vocabulary keywords are
    /// dropped.
    pub fn keyword_ids(&self, vocab: &Vocabulary) -> Vec<Vec<usize>> {
        self.lists
            .iter()
            .map(|l| l.iter().filter_map(|(t, _)| vocab.id(t)).collect())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("k {}\n", self.k);
        for intent in IntentLabel::all() {
            let _ = writeln!(s, "\n[{}]", intent.name());
            for (tok, score) in &self.lists[intent.id()] {
                let _ = writeln!(s, "{tok} {score}");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("keyword table", d);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let k: usize = header
            .strip_prefix("k ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let mut lists: Vec<Vec<(String, f64)>> = vec![Vec::new(); NUM_INTENTS];
        let mut current: Option<IntentLabel> = None;
        let mut seen = [false; NUM_INTENTS];
        for line in lines {
            let line = line.trim();
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let intent = IntentLabel::from_name(name)?;
                seen[intent.id()] = true;
                current = Some(intent);
                continue;
            }
            let intent = current.ok_or_else(|| bad("entry before first block".into()))?;
            let (tok, score) = line
                .rsplit_once(' ')
                .ok_or_else(|| bad(format!("bad line {line:?}")))?;
            let score: f64 = score
                .parse()
                .map_err(|_| bad(format!("bad score in {line:?}")))?;
            lists[intent.id()].push((tok.to_string(), score));
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("missing intent block".into()));
        }
        Self::from_lists(k, lists)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Tokens of one intent group after stop-word and punctuation removal.
fn group_documents(corpus: &[IntentExample], stopwords: &HashSet<String>) -> Vec<Vec<String>> {
    let mut docs: Vec<Vec<String>> = vec![Vec::new(); NUM_INTENTS];
    for ex in corpus {
        docs[ex.intent.id()].extend(
            tokenize(&ex.text)
                .into_iter()
                .filter(|t| t.chars().any(char::is_alphabetic) && !stopwords.contains(t)),
        );
    }
    docs
}

/// Relative frequency of every token within each intent document.
pub fn relative_frequencies(
    corpus: &[IntentExample],
    stopwords: &HashSet<String>,
) -> Vec<HashMap<String, f64>> {
    group_documents(corpus, stopwords)
        .into_iter()
        .map(|doc| {
            let n = doc.len() as f64;
            let mut counts: HashMap<String, f64> = HashMap::new();
            for t in doc {
                *counts.entry(t).or_default() += 1.0;
            }
            counts.values_mut().for_each(|c| *c /= n);
            counts
        })
        .collect()
}

pub fn extract_keywords(
    corpus: &[IntentExample],
    k: usize,
    stopwords: &HashSet<String>,
) -> Result<KeywordTable> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let tf = relative_frequencies(corpus, stopwords);
    if let Some(empty) = IntentLabel::all().find(|l| tf[l.id()].is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "intent {empty} has no tokens left after stop-word removal"
        )));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &tf {
        for tok in doc.keys() {
            *df.entry(tok.as_str()).or_default() += 1;
        }
    }
    let lists = tf
        .iter()
        .map(|doc| {
            let mut scored: Vec<(String, f64)> = doc
                .iter()
                .map(|(tok, &f)| {
                    let idf = (NUM_INTENTS as f64 / (1.0 + df[tok.as_str()] as f64)).ln() + 1.0;
                    (tok.clone(), f * idf)
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            scored.truncate(k);
            scored
        })
        .collect();
    KeywordTable::from_lists(k, lists)
}
