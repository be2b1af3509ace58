//! Word vocabulary with fixed special tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Vocabulary indices of one caption, framed `BOS ... EOS`.
pub type TokenSequence = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps words seen at least `min_freq` times, plus every `always` word.
    ///
    /// Indices after the specials are assigned by (frequency desc, word asc),
    /// so the result does not depend on the order sentences arrive in.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a [String]>, min_freq: usize, always: &[String]) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for w in s {
                *freq.entry(w.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = freq.iter().filter(|(_, &c)| c >= min_freq).map(|(&w, &c)| (w, c)).collect();
        for w in always {
            if !kept.iter().any(|(k, _)| *k == w.as_str()) {
                kept.push((w.as_str(), freq.get(w.as_str()).copied().unwrap_or(0)));
            }
        }
        kept.retain(|(w, _)| !SPECIALS.contains(w));
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let words = SPECIALS.iter().map(|s| s.to_string()).chain(kept.into_iter().map(|(w, _)| w.to_string())).collect();
        Vocab::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    /// `BOS w1 .. wn EOS`.
    pub fn encode(&self, words: &[String]) -> TokenSequence {
        std::iter::once(BOS).chain(words.iter().map(|w| self.id(w))).chain(std::iter::once(EOS)).collect()
    }

    /// Words up to the first EOS, skipping BOS and PAD.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .copied()
            .take_while(|&i| i != EOS)
            .filter(|&i| i != BOS && i != PAD)
            .map(|i| self.word(i).to_string())
            .collect()
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }
}
