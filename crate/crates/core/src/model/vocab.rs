use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lex::lex;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const START: usize = 3;
pub const END: usize = 4;
pub const BUG_OPEN: usize = 5;
pub const BUG_CLOSE: usize = 6;

const SPECIALS: [&str; 7] = ["<pad>", "<unk>", "<cls>", "<start/>", "<end/>", "<bug>", "</bug>"];

/// Word-level vocabulary over lexer token texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub const N_SPECIAL: usize = SPECIALS.len();

    /// Keeps every token text seen at least `min_freq` times, ordered by
    /// descending frequency and then by text.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in lex(text)?.tokens {
                *counts.entry(tok.text).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq.max(1) && !SPECIALS.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect::<Vec<_>>();
        Ok(Vocab::from(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, text: &str) -> usize {
        self.index.get(text).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Ids of every lexer token of `code`, position for position.
    pub fn encode(&self, code: &str) -> Result<Vec<usize>> {
        Ok(lex(code)?.tokens.iter().map(|t| self.id(&t.text)).collect())
    }

    /// Space-joined token texts, stopping at END and skipping other
    /// specials.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut parts = Vec::new();
        for &id in ids {
            if id == END {
                break;
            }
            if id >= Self::N_SPECIAL || id == UNK {
                parts.push(self.token(id).unwrap_or("<unk>"));
            }
        }
        parts.join(" ")
    }
}
