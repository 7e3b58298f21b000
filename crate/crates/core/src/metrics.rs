//! Accuracy, perplexity, unlabeled bracketing F1 and attachment scores.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::BinaryTree;

/// `exp(-mean log p)` over natural-log probabilities.
pub fn perplexity(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::contract("perplexity of an empty position set"));
    }
    if log_probs.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
        return Err(Error::contract("log-probabilities must be finite and <= 0"));
    }
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok((-mean).exp())
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.len() != gold.len() || gold.is_empty() {
        return Err(Error::contract("accuracy needs equal, non-empty label lists"));
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            matched,
            predicted,
            gold,
        }
    }
}

/// Micro-averaged bracketing scores. Constituents are spans of two or more
/// tokens, the whole sentence included.
pub fn uf1(pred: &[BinaryTree], gold: &[BinaryTree]) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::contract("uf1 needs one predicted tree per gold tree"));
    }
    let (mut matched, mut predicted, mut total) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        if p.num_leaves() != g.num_leaves() {
            return Err(Error::contract(format!(
                "leaf count mismatch: {} vs {}",
                p.num_leaves(),
                g.num_leaves()
            )));
        }
        let ps: HashSet<_> = p.spans().into_iter().collect();
        let gs: HashSet<_> = g.spans().into_iter().collect();
        matched += ps.intersection(&gs).count();
        predicted += ps.len();
        total += gs.len();
    }
    Ok(Prf::from_counts(matched, predicted, total))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub uas: f64,
    pub uuas: f64,
    pub tokens: usize,
    pub edges: usize,
}

/// Heads are 1-indexed with 0 marking the root. UAS counts tokens with the
/// right head; UUAS compares undirected word-word edge sets, `T - 1` per
/// sentence.
pub fn uas_uuas(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<Attachment> {
    if pred.len() != gold.len() {
        return Err(Error::contract("uas needs one prediction per gold sentence"));
    }
    let (mut correct, mut tokens, mut shared, mut edges) = (0, 0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::contract(format!("length mismatch: {} vs {}", p.len(), g.len())));
        }
        if g.iter().filter(|&&h| h == 0).count() != 1 {
            return Err(Error::contract("gold tree must have exactly one root"));
        }
        if p.iter().chain(g).any(|&h| h > g.len()) {
            return Err(Error::contract("head index out of range"));
        }
        correct += p.iter().zip(g).filter(|(a, b)| a == b).count();
        tokens += g.len();
        let undirected = |heads: &[usize]| -> HashSet<(usize, usize)> {
            heads
                .iter()
                .enumerate()
                .filter(|&(_, &h)| h != 0)
                .map(|(i, &h)| ((i + 1).min(h), (i + 1).max(h)))
                .collect()
        };
        shared += undirected(p).intersection(&undirected(g)).count();
        edges += g.len() - 1;
    }
    if tokens == 0 {
        return Err(Error::contract("attachment scores over an empty corpus"));
    }
    Ok(Attachment {
        uas: correct as f64 / tokens as f64,
        uuas: if edges == 0 { 1.0 } else { shared as f64 / edges as f64 },
        tokens,
        edges,
    })
}

/// Accuracy grouped by an integer key such as operator count.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Buckets {
    pub counts: BTreeMap<usize, (usize, usize)>,
}

impl Buckets {
    pub fn record(&mut self, bucket: usize, correct: bool) {
        let e = self.counts.entry(bucket).or_default();
        e.0 += correct as usize;
        e.1 += 1;
    }

    pub fn accuracy(&self) -> BTreeMap<usize, f64> {
        self.counts
            .iter()
            .map(|(&k, &(c, n))| (k, c as f64 / n as f64))
            .collect()
    }
}

/// Named scalars plus per-bucket breakdowns, tagged with the dataset and
/// seed they came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub buckets: BTreeMap<String, BTreeMap<usize, f64>>,
    pub conventions: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(dataset: impl Into<String>, seed: u64) -> Self {
        let conventions = [
            ("uf1_spans", "length >= 2, sentence span included"),
            ("aggregation", "micro"),
            ("perplexity_base", "e"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        MetricReport {
            dataset: dataset.into(),
            seed,
            conventions,
            ..Default::default()
        }
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perplexity_examples() {
        assert!((perplexity(&[(0.1f64).ln(); 4]).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(perplexity(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(perplexity(&[]).is_err());
    }

    #[test]
    fn uf1_branching() {
        let s = uf1(&[BinaryTree::left_branching(3)], &[BinaryTree::right_branching(3)]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        assert!(uf1(&[BinaryTree::left_branching(3)], &[BinaryTree::left_branching(4)]).is_err());
    }

    #[test]
    fn attachment_example() {
        let a = uas_uuas(&[vec![2, 0, 1]], &[vec![2, 0, 2]]).unwrap();
        assert!((a.uas - 2.0 / 3.0).abs() < 1e-12);
        assert!((a.uuas - 0.5).abs() < 1e-12);
        let rev = uas_uuas(&[vec![0, 1, 2]], &[vec![2, 3, 0]]).unwrap();
        assert_eq!(rev.uas, 0.0);
        assert_eq!(rev.uuas, 1.0);
    }
}
