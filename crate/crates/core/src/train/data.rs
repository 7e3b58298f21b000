//! Datasets encoded against a vocabulary, and length-bucketed batching.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tasks::{listops, logic, ListopsExample, LogicExample, ToySentence, Vocab};
use crate::tree::BinaryTree;

use super::config::Task;

#[derive(Clone, Debug, PartialEq)]
pub struct SeqItem {
    pub ids: Vec<usize>,
    pub label: usize,
    pub bucket: usize,
    pub tree: Option<BinaryTree>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairItem {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub label: usize,
    pub bucket: usize,
}

/// `heads` is empty when the corpus carries no gold parse.
#[derive(Clone, Debug, PartialEq)]
pub struct SentItem {
    pub ids: Vec<usize>,
    pub heads: Vec<usize>,
    pub types: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Data {
    Classify(Vec<SeqItem>),
    Pairs(Vec<PairItem>),
    Corpus(Vec<SentItem>),
}

impl Data {
    pub fn len(&self) -> usize {
        match self {
            Data::Classify(v) => v.len(),
            Data::Pairs(v) => v.len(),
            Data::Corpus(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length used for bucketing.
    pub fn length(&self, i: usize) -> usize {
        match self {
            Data::Classify(v) => v[i].ids.len(),
            Data::Pairs(v) => v[i].left.len().max(v[i].right.len()),
            Data::Corpus(v) => v[i].ids.len(),
        }
    }
}

/// Raw records as read from JSONL.
#[derive(Clone, Debug, PartialEq)]
pub enum Records {
    Listops(Vec<ListopsExample>),
    Logic(Vec<LogicExample>),
    Toy(Vec<ToySentence>),
}

impl Records {
    pub fn load(task: Task, path: &std::path::Path) -> Result<Self> {
        use crate::tasks::io::read_jsonl;
        Ok(match task {
            Task::Listops => Records::Listops(read_jsonl(path)?),
            Task::Logic => Records::Logic(read_jsonl(path)?),
            Task::Toy => Records::Toy(read_jsonl(path)?),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Records::Listops(v) => v.len(),
            Records::Logic(v) => v.len(),
            Records::Toy(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Task vocabulary: fixed for the formal languages, counted from the
    /// corpus otherwise.
    pub fn vocab(&self, min_freq: usize) -> Result<Vocab> {
        match self {
            Records::Listops(_) => Vocab::from_list(&listops::vocabulary()),
            Records::Logic(_) => Vocab::from_list(&logic::vocabulary()),
            Records::Toy(v) => {
                let corpus: Vec<Vec<String>> = v.iter().map(|s| s.tokens.clone()).collect();
                crate::tasks::build_vocab(&corpus, min_freq)
            }
        }
    }

    pub fn encode(&self, vocab: &Vocab) -> Result<Data> {
        if self.is_empty() {
            return Err(Error::contract("dataset is empty"));
        }
        Ok(match self {
            Records::Listops(v) => Data::Classify(
                v.iter()
                    .map(|ex| SeqItem {
                        ids: vocab.encode(&ex.tokens),
                        label: ex.label as usize,
                        bucket: listops::parse(&ex.tokens).map(|e| e.depth()).unwrap_or(0),
                        tree: Some(ex.tree.clone()),
                    })
                    .collect(),
            ),
            Records::Logic(v) => Data::Pairs(
                v.iter()
                    .map(|ex| PairItem {
                        left: vocab.encode(&ex.tokens[0]),
                        right: vocab.encode(&ex.tokens[1]),
                        label: ex.label.index(),
                        bucket: ex.bucket(),
                    })
                    .collect(),
            ),
            Records::Toy(v) => Data::Corpus(
                v.iter()
                    .map(|s| SentItem {
                        ids: vocab.encode(&s.tokens),
                        heads: s.heads.clone(),
                        types: s.types.clone(),
                    })
                    .collect(),
            ),
        })
    }
}

fn group(data: &Data, idx: Vec<usize>, batch_size: usize, exact: bool) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match batches.last_mut() {
            Some(b) if b.len() < batch_size && (!exact || data.length(b[0]) == data.length(i)) => b.push(i),
            _ => batches.push(vec![i]),
        }
    }
    batches
}

/// Groups indices into batches of similar length. With `exact` every batch
/// holds a single length. Order inside a length group and the order of
/// batches both come from `rng`.
pub fn length_batches(data: &Data, batch_size: usize, exact: bool, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut idx);
    idx.sort_by_key(|&i| data.length(i));
    let mut batches = group(data, idx, batch_size, exact);
    rng.shuffle(&mut batches);
    batches
}

/// Fixed-order batches for evaluation.
pub fn eval_batches(data: &Data, batch_size: usize, exact: bool) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by_key(|&i| data.length(i));
    group(data, idx, batch_size, exact)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_everything_once() {
        let items: Vec<SentItem> = (0..37)
            .map(|i| SentItem {
                ids: vec![0; 2 + i % 5],
                heads: vec![],
                types: vec![],
            })
            .collect();
        let data = Data::Corpus(items);
        for exact in [false, true] {
            let b = length_batches(&data, 4, exact, &mut Rng::new(1));
            let mut all: Vec<usize> = b.iter().flatten().copied().collect();
            all.sort();
            assert_eq!(all, (0..37).collect::<Vec<_>>());
            assert!(b.iter().all(|x| x.len() <= 4));
            if exact {
                assert!(b.iter().all(|x| x.iter().all(|&i| data.length(i) == data.length(x[0]))));
            }
        }
    }
}
