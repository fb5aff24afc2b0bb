use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Encode,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mapped {
    Ids(Vec<usize>),
    Tokens(Vec<String>),
}

/// Immutable token/id bijection. The four specials hold ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    frequencies: Vec<u64>,
}

impl Vocabulary {
    /// Ranks tokens by frequency (ties lexicographic), drops those below
    /// `min_freq`, and truncates to `max_size` entries including specials.
    pub fn build<I, S>(sequences: I, max_size: usize, min_freq: u64) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size <= SPECIALS.len() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary max_size must exceed {}, got {max_size}",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                let tok = tok.as_ref();
                if SPECIALS.contains(&tok) {
                    continue;
                }
                *counts.entry(tok.to_string()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut frequencies = vec![0; SPECIALS.len()];
        for (tok, c) in ranked {
            id_to_token.push(tok);
            frequencies.push(c);
        }
        Ok(Self::from_parts(id_to_token, frequencies))
    }

    fn from_parts(id_to_token: Vec<String>, frequencies: Vec<u64>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
            frequencies,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Occurrence count seen at build time (0 for specials and for
    /// vocabularies read back from disk).
    pub fn frequency(&self, id: usize) -> u64 {
        self.frequencies.get(id).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or(Error::TokenOutOfRange {
                        id,
                        size: self.len(),
                    })
            })
            .collect()
    }

    /// Decodes and drops PAD/BOS/EOS.
    pub fn decode_clean(&self, ids: &[usize]) -> Result<Vec<String>> {
        let kept: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&i| i != PAD && i != BOS && i != EOS)
            .collect();
        self.decode(&kept)
    }

    /// Direction-tagged mapping. Encode expects `Mapped::Tokens`, decode
    /// expects `Mapped::Ids`.
    pub fn map_tokens(&self, input: &Mapped, direction: Direction) -> Result<Mapped> {
        match (input, direction) {
            (Mapped::Tokens(t), Direction::Encode) => Ok(Mapped::Ids(self.encode(t))),
            (Mapped::Ids(ids), Direction::Decode) => Ok(Mapped::Tokens(self.decode(ids)?)),
            _ => Err(Error::InvalidArgument(
                "map_tokens input does not match direction".into(),
            )),
        }
    }

    /// One token per line in id order; the first four lines are the specials.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIALS.len() || lines[..SPECIALS.len()] != SPECIALS {
            return Err(Error::format(
                "vocabulary file",
                "missing special-token header",
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &lines {
            if l.is_empty() || l.chars().any(char::is_whitespace) || !seen.insert(*l) {
                return Err(Error::format("vocabulary file", format!("bad entry {l:?}")));
            }
        }
        let id_to_token: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        let n = id_to_token.len();
        Ok(Self::from_parts(id_to_token, vec![0; n]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// SHA-256 of the on-disk text form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(counts: &[(&str, usize)]) -> Vec<Vec<String>> {
        counts.iter().map(|(t, n)| vec![t.to_string(); *n]).collect()
    }

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build(corpus(&[("b", 1), ("a", 3)]), 10, 1).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "<bos>", "<eos>", "a", "b"]);
    }

    #[test]
    fn min_freq_drops() {
        let v = Vocabulary::build(corpus(&[("b", 1), ("a", 3)]), 10, 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = Vocabulary::build(corpus(&[("b", 2), ("a", 2)]), 10, 1).unwrap();
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
    }

    #[test]
    fn max_size_includes_specials() {
        let v = Vocabulary::build(corpus(&[("a", 3), ("b", 2), ("c", 1)]), 6, 1).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.id("c").is_none());
        assert!(Vocabulary::build(corpus(&[("a", 1)]), 4, 1).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::build(corpus(&[("a", 3)]), 10, 1).unwrap();
        assert_eq!(v.encode(&["a"]), vec![4]);
        assert_eq!(v.encode(&["zzz"]), vec![UNK]);
        assert!(matches!(
            v.decode(&[99]),
            Err(Error::TokenOutOfRange { id: 99, .. })
        ));
        assert_eq!(v.decode(&[0, 3]).unwrap(), vec!["<pad>", "<eos>"]);
        let m = v
            .map_tokens(&Mapped::Tokens(vec!["a".into()]), Direction::Encode)
            .unwrap();
        assert_eq!(m, Mapped::Ids(vec![4]));
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(corpus(&[("a", 3), ("b", 2)]), 10, 1).unwrap();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert_eq!(back.hash(), v.hash());
        assert!(Vocabulary::from_text("a\nb\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_in_vocab(words in proptest::collection::vec("[a-e]{1,3}", 1..40)) {
            let v = Vocabulary::build(vec![words.clone()], 1000, 1).unwrap();
            let ids = v.encode(&words);
            prop_assert_eq!(v.decode(&ids).unwrap(), words);
            for (i, t) in v.tokens().iter().enumerate() {
                prop_assert_eq!(v.id(t), Some(i));
            }
        }
    }
}
