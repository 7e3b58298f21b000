use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";
pub const MASK: &str = "<mask>";

/// Token/id map. Kept tokens come first ordered by descending frequency
/// then lexically, followed by `<unk>`, `<pad>` and `<mask>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    min_freq: usize,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_tokens(r.tokens, r.min_freq)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            tokens: v.tokens,
            min_freq: v.min_freq,
        }
    }
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index, min_freq }
    }

    /// Fixed vocabulary with the specials appended.
    pub fn from_list(words: &[impl AsRef<str>]) -> Result<Self> {
        let mut tokens: Vec<String> = Vec::new();
        for w in words {
            let w = w.as_ref();
            if [UNK, PAD, MASK].contains(&w) || tokens.iter().any(|t| t == w) {
                return Err(Error::contract(format!("duplicate or reserved token {w:?}")));
            }
            tokens.push(w.to_string());
        }
        tokens.extend([UNK, PAD, MASK].map(String::from));
        Ok(Vocab::from_tokens(tokens, 1))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn unk(&self) -> usize {
        self.index[UNK]
    }

    pub fn pad(&self) -> usize {
        self.index[PAD]
    }

    pub fn mask(&self) -> usize {
        self.index[MASK]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or_else(|| self.unk())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[impl AsRef<str>]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }
}

pub fn build_vocab(corpus: &[Vec<String>], min_freq: usize) -> Result<Vocab> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for tok in corpus.iter().flatten() {
        *freq.entry(tok.as_str()).or_default() += 1;
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, n)| n >= min_freq && ![UNK, PAD, MASK].contains(&t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut tokens: Vec<String> = kept.into_iter().map(|(t, _)| t.to_string()).collect();
    tokens.extend([UNK, PAD, MASK].map(String::from));
    Ok(Vocab::from_tokens(tokens, min_freq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn threshold_and_order() {
        let v = build_vocab(&corpus(&["a a b"]), 2).unwrap();
        assert_eq!(v.tokens(), &["a", "<unk>", "<pad>", "<mask>"]);
        assert_eq!(v.id("b"), v.unk());
        let v = build_vocab(&corpus(&["c b b a a"]), 1).unwrap();
        assert_eq!(v.tokens(), &["a", "b", "c", "<unk>", "<pad>", "<mask>"]);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(build_vocab(&[], 1).is_err());
        assert!(build_vocab(&corpus(&[""]), 1).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocab(&corpus(&["x y y"]), 1).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("y"), 0);
    }
}
