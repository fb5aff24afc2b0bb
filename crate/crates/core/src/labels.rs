//! The fixed label sets: nine empathetic intents and 32 situation emotions.

use std::fmt;

use crate::error::{Error, Result};

pub const NUM_INTENTS: usize = 9;
pub const NUM_EMOTIONS: usize = 32;

const INTENT_NAMES: [&str; NUM_INTENTS] = [
    "Agreeing",
    "Acknowledging",
    "Encouraging",
    "Consoling",
    "Sympathizing",
    "Suggesting",
    "Questioning",
    "Wishing",
    "Neutral",
];

const EMOTION_NAMES: [&str; NUM_EMOTIONS] = [
    "afraid",
    "angry",
    "annoyed",
    "anticipating",
    "anxious",
    "apprehensive",
    "ashamed",
    "caring",
    "confident",
    "content",
    "devastated",
    "disappointed",
    "disgusted",
    "embarrassed",
    "excited",
    "faithful",
    "furious",
    "grateful",
    "guilty",
    "hopeful",
    "impressed",
    "jealous",
    "joyful",
    "lonely",
    "nostalgic",
    "prepared",
    "proud",
    "sad",
    "sentimental",
    "surprised",
    "terrified",
    "trusting",
];

/// One of the nine listener intents. Ids follow the canonical order
/// Agreeing, Acknowledging, Encouraging, Consoling, Sympathizing,
/// Suggesting, Questioning, Wishing, Neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntentLabel(u8);

impl IntentLabel {
    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_INTENTS {
            Ok(IntentLabel(id as u8))
        } else {
            Err(Error::UnknownIntent(format!("id {id}")))
        }
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        INTENT_NAMES[self.id()]
    }

    /// Case-insensitive lookup by name.
    pub fn from_name(name: &str) -> Result<Self> {
        let needle = name.trim();
        INTENT_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(needle))
            .map(|i| IntentLabel(i as u8))
            .ok_or_else(|| Error::UnknownIntent(needle.to_string()))
    }

    pub fn all() -> impl Iterator<Item = IntentLabel> {
        (0..NUM_INTENTS).map(|i| IntentLabel(i as u8))
    }

    pub fn names() -> &'static [&'static str] {
        &INTENT_NAMES
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One of the 32 situation emotions, ids in alphabetical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmotionLabel(u8);

impl EmotionLabel {
    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_EMOTIONS {
            Ok(EmotionLabel(id as u8))
        } else {
            Err(Error::UnknownEmotion(format!("id {id}")))
        }
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        EMOTION_NAMES[self.id()]
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let needle = name.trim();
        EMOTION_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(needle))
            .map(|i| EmotionLabel(i as u8))
            .ok_or_else(|| Error::UnknownEmotion(needle.to_string()))
    }

    pub fn all() -> impl Iterator<Item = EmotionLabel> {
        (0..NUM_EMOTIONS).map(|i| EmotionLabel(i as u8))
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_sets_are_bijective() {
        for l in IntentLabel::all() {
            assert_eq!(IntentLabel::from_name(l.name()).unwrap(), l);
        }
        for e in EmotionLabel::all() {
            assert_eq!(EmotionLabel::from_name(e.name()).unwrap(), e);
        }
        assert_eq!(IntentLabel::all().count(), 9);
        assert_eq!(EmotionLabel::all().count(), 32);
        let mut names = EMOTION_NAMES.to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 32);
    }

    #[test]
    fn canonical_intent_order() {
        assert_eq!(IntentLabel::new(4).unwrap().name(), "Sympathizing");
        assert_eq!(IntentLabel::from_name("questioning").unwrap().id(), 6);
        assert!(IntentLabel::from_name("Foo").is_err());
        assert!(IntentLabel::new(9).is_err());
    }
}
