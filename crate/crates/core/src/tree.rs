//! Unlabeled binary constituency trees and the distance-to-tree parser.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized as nested JSON arrays: a leaf is its token index, a node is
/// `[left, right]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinaryTree {
    Leaf(usize),
    Node(Box<BinaryTree>, Box<BinaryTree>),
}

impl BinaryTree {
    pub fn node(left: BinaryTree, right: BinaryTree) -> Self {
        BinaryTree::Node(Box::new(left), Box::new(right))
    }

    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            BinaryTree::Leaf(i) => out.push(*i),
            BinaryTree::Node(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            BinaryTree::Leaf(_) => 1,
            BinaryTree::Node(l, r) => l.num_leaves() + r.num_leaves(),
        }
    }

    /// Leaves are exactly `0..n` in order.
    pub fn is_well_formed(&self, n: usize) -> bool {
        self.leaves() == (0..n).collect::<Vec<_>>()
    }

    /// Leaf = 0, node = 1 + max(child heights).
    pub fn height(&self) -> usize {
        match self {
            BinaryTree::Leaf(_) => 0,
            BinaryTree::Node(l, r) => 1 + l.height().max(r.height()),
        }
    }

    /// Constituent spans `(start, end)` with `end` exclusive, covering every
    /// internal node (so every span has length at least 2, and the whole
    /// sentence is included). Listed in pre-order.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.collect_spans(&mut out);
        out
    }

    fn collect_spans(&self, out: &mut Vec<(usize, usize)>) -> (usize, usize) {
        match self {
            BinaryTree::Leaf(i) => (*i, i + 1),
            BinaryTree::Node(l, r) => {
                let slot = out.len();
                out.push((0, 0));
                let (s, _) = l.collect_spans(out);
                let (_, e) = r.collect_spans(out);
                out[slot] = (s, e);
                (s, e)
            }
        }
    }

    /// Distance per boundary: entry `k` is the height of the lowest common
    /// ancestor of leaves `k` and `k + 1`. Feeding the result back through
    /// [`distance_to_tree`] rebuilds this tree.
    pub fn boundary_heights(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_leaves().saturating_sub(1)];
        self.fill_heights(&mut out);
        out
    }

    fn fill_heights(&self, out: &mut [f64]) -> (usize, usize, usize) {
        match self {
            BinaryTree::Leaf(i) => (*i, *i, 0),
            BinaryTree::Node(l, r) => {
                let (s, m, hl) = l.fill_heights(out);
                let (_, e, hr) = r.fill_heights(out);
                let h = 1 + hl.max(hr);
                out[m] = h as f64;
                (s, e, h)
            }
        }
    }

    /// `( ( w0 w1 ) w2 )`, with each leaf rendered through `word`.
    pub fn render_with<F: Fn(usize) -> String>(&self, word: &F) -> String {
        match self {
            BinaryTree::Leaf(i) => word(*i),
            BinaryTree::Node(l, r) => {
                format!("( {} {} )", l.render_with(word), r.render_with(word))
            }
        }
    }

    pub fn render(&self, tokens: &[String]) -> String {
        self.render_with(&|i| tokens.get(i).cloned().unwrap_or_else(|| format!("w{i}")))
    }

    /// Rendering with placeholder words `w0, w1, ...`.
    pub fn render_indices(&self) -> String {
        self.render_with(&|i| format!("w{i}"))
    }

    pub fn left_branching(n: usize) -> Self {
        let mut t = BinaryTree::Leaf(0);
        for i in 1..n {
            t = BinaryTree::node(t, BinaryTree::Leaf(i));
        }
        t
    }

    pub fn right_branching(n: usize) -> Self {
        let mut t = BinaryTree::Leaf(n - 1);
        for i in (0..n - 1).rev() {
            t = BinaryTree::node(BinaryTree::Leaf(i), t);
        }
        t
    }

    /// Parses the bracketed rendering produced by [`BinaryTree::render`]
    /// (any leaf words), renumbering leaves left to right.
    pub fn parse_brackets(text: &str) -> Result<Self> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        let mut pos = 0;
        let mut next = 0;
        let tree = parse_node(&toks, &mut pos, &mut next)?;
        if pos != toks.len() {
            return Err(Error::Parse {
                pos,
                msg: "trailing tokens after tree".into(),
            });
        }
        Ok(tree)
    }
}

fn parse_node(toks: &[&str], pos: &mut usize, next: &mut usize) -> Result<BinaryTree> {
    let tok = toks.get(*pos).ok_or_else(|| Error::Parse {
        pos: *pos,
        msg: "unexpected end of input".into(),
    })?;
    match *tok {
        "(" => {
            *pos += 1;
            let l = parse_node(toks, pos, next)?;
            let r = parse_node(toks, pos, next)?;
            if toks.get(*pos) != Some(&")") {
                return Err(Error::Parse {
                    pos: *pos,
                    msg: "expected ')' after two children".into(),
                });
            }
            *pos += 1;
            Ok(BinaryTree::node(l, r))
        }
        ")" => Err(Error::Parse {
            pos: *pos,
            msg: "unexpected ')'".into(),
        }),
        _ => {
            *pos += 1;
            *next += 1;
            Ok(BinaryTree::Leaf(*next - 1))
        }
    }
}

/// Greedy top-down split at the largest distance; `distances[k]` sits
/// between tokens `k` and `k + 1`. Ties go to the smallest index.
pub fn distance_to_tree(distances: &[f64], n: usize) -> Result<BinaryTree> {
    if n == 0 || distances.len() + 1 != n {
        return Err(Error::contract(format!(
            "{} distances for a sentence of {} tokens",
            distances.len(),
            n
        )));
    }
    Ok(split(distances, 0))
}

fn split(d: &[f64], offset: usize) -> BinaryTree {
    if d.is_empty() {
        return BinaryTree::Leaf(offset);
    }
    let mut k = 0;
    for (j, &v) in d.iter().enumerate() {
        if v > d[k] {
            k = j;
        }
    }
    let left = split(&d[..k], offset);
    let right = split(&d[k + 1..], offset + k + 1);
    BinaryTree::node(left, right)
}
