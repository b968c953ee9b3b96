use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::RawSample;
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "nil";
pub const PAD: usize = 0;

/// Word ↔ index bijection with the padding token at index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from the listed words in order; `nil` is prepended.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string()];
        all.extend(words.into_iter().map(Into::into).filter(|w| w != PAD_TOKEN));
        Vocab::from(all)
    }

    /// Placeholder words `w1..w{size-1}` for synthetic data.
    pub fn synthetic(size: usize) -> Self {
        Vocab::from_words((1..size).map(|i| format!("w{i}")))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn lookup(&self, word: &str) -> Result<usize> {
        self.id(word).ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

/// Sorted vocabulary over every story, query and answer token.
pub fn build_vocab(samples: &[RawSample]) -> Vocab {
    let mut set = BTreeSet::new();
    for s in samples {
        for sent in &s.story {
            set.extend(sent.iter().cloned());
        }
        set.extend(s.query.iter().cloned());
        set.insert(s.answer.clone());
    }
    Vocab::from_words(set)
}
