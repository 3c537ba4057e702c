use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::scene::{Color, Shape};
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const END_ID: usize = 1;

const WORDS: &[&str] = &[
    "is", "the", "to", "left", "right", "of", "above", "below", "how", "many", "are", "there", "a", "?", "yes", "no",
    "objects", "at", "row", "col", "and",
];

/// Closed word-level vocabulary; id 0 pads and id 1 ends an answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = vec!["<pad>".into(), "<end>".into()];
        tokens.extend(WORDS.iter().map(|w| w.to_string()));
        tokens.extend((0..10).map(|d| d.to_string()));
        tokens.extend(Color::ALL.iter().map(|c| c.name().to_string()));
        tokens.extend(Shape::ALL.iter().map(|s| s.name().to_string()));
        tokens.extend(Shape::ALL.iter().map(|s| s.plural().to_string()));
        Self::from_tokens(tokens).expect("standard vocabulary is bijective")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Whitespace-separated words to ids.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::Compatibility(format!("word {w:?} is not in the vocabulary")))
            })
            .collect()
    }

    /// Answer tokens followed by the end token.
    pub fn encode_answer(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = self.encode(text)?;
        ids.push(END_ID);
        Ok(ids)
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let words: Result<Vec<&str>> = ids
            .iter()
            .filter(|&&i| i != PAD_ID && i != END_ID)
            .map(|&i| {
                self.tokens
                    .get(i)
                    .map(String::as_str)
                    .ok_or(Error::Index {
                        index: i,
                        size: self.tokens.len(),
                    })
            })
            .collect();
        Ok(words?.join(" "))
    }

    /// sha256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
