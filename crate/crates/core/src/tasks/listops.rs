//! ListOps: nested prefix lists of MAX, MIN, MED and SM (sum mod 10).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tree::BinaryTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ListOp {
    Max,
    Min,
    Med,
    Sm,
}

impl ListOp {
    pub const ALL: [ListOp; 4] = [ListOp::Max, ListOp::Min, ListOp::Med, ListOp::Sm];

    pub fn token(self) -> &'static str {
        match self {
            ListOp::Max => "[MAX",
            ListOp::Min => "[MIN",
            ListOp::Med => "[MED",
            ListOp::Sm => "[SM",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        ListOp::ALL.into_iter().find(|op| op.token() == tok)
    }

    pub fn apply(self, args: &[u8]) -> u8 {
        match self {
            ListOp::Max => *args.iter().max().expect("non-empty"),
            ListOp::Min => *args.iter().min().expect("non-empty"),
            ListOp::Med => {
                let mut s = args.to_vec();
                s.sort_unstable();
                s[(s.len() - 1) / 2]
            }
            ListOp::Sm => (args.iter().map(|&a| a as u32).sum::<u32>() % 10) as u8,
        }
    }
}

pub const CLOSE: &str = "]";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ListExpr {
    Digit(u8),
    List(ListOp, Vec<ListExpr>),
}

impl ListExpr {
    pub fn eval(&self) -> u8 {
        match self {
            ListExpr::Digit(d) => *d,
            ListExpr::List(op, args) => {
                let vals: Vec<u8> = args.iter().map(ListExpr::eval).collect();
                op.apply(&vals)
            }
        }
    }

    /// Nesting depth; a bare digit has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            ListExpr::Digit(_) => 0,
            ListExpr::List(_, args) => 1 + args.iter().map(ListExpr::depth).max().unwrap_or(0),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<String>) {
        match self {
            ListExpr::Digit(d) => out.push(d.to_string()),
            ListExpr::List(op, args) => {
                out.push(op.token().to_string());
                for a in args {
                    a.push_tokens(out);
                }
                out.push(CLOSE.to_string());
            }
        }
    }

    pub fn num_tokens(&self) -> usize {
        match self {
            ListExpr::Digit(_) => 1,
            ListExpr::List(_, args) => 2 + args.iter().map(ListExpr::num_tokens).sum::<usize>(),
        }
    }

    /// Each list is left-branching over its operator, arguments and
    /// closing bracket.
    pub fn gold_tree(&self) -> BinaryTree {
        let mut next = 0;
        self.build_tree(&mut next)
    }

    fn build_tree(&self, next: &mut usize) -> BinaryTree {
        let leaf = |next: &mut usize| {
            *next += 1;
            BinaryTree::Leaf(*next - 1)
        };
        match self {
            ListExpr::Digit(_) => leaf(next),
            ListExpr::List(_, args) => {
                let mut t = leaf(next);
                for a in args {
                    let sub = a.build_tree(next);
                    t = BinaryTree::node(t, sub);
                }
                let close = leaf(next);
                BinaryTree::node(t, close)
            }
        }
    }
}

/// Parses whitespace tokens into an expression.
pub fn parse(tokens: &[impl AsRef<str>]) -> Result<ListExpr> {
    let mut pos = 0;
    let e = parse_expr(tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(Error::Parse {
            pos,
            msg: "trailing tokens".into(),
        });
    }
    Ok(e)
}

fn parse_expr(tokens: &[impl AsRef<str>], pos: &mut usize) -> Result<ListExpr> {
    let tok = tokens.get(*pos).map(|t| t.as_ref()).ok_or_else(|| Error::Parse {
        pos: *pos,
        msg: "unexpected end of expression".into(),
    })?;
    if let Some(op) = ListOp::from_token(tok) {
        let start = *pos;
        *pos += 1;
        let mut args = Vec::new();
        loop {
            match tokens.get(*pos).map(|t| t.as_ref()) {
                Some(CLOSE) => {
                    *pos += 1;
                    break;
                }
                Some(_) => args.push(parse_expr(tokens, pos)?),
                None => {
                    return Err(Error::Parse {
                        pos: *pos,
                        msg: format!("list opened at {start} is never closed"),
                    })
                }
            }
        }
        if args.is_empty() {
            return Err(Error::Parse {
                pos: start,
                msg: "list without arguments".into(),
            });
        }
        return Ok(ListExpr::List(op, args));
    }
    match tok.parse::<u8>() {
        Ok(d) if d <= 9 && tok.len() == 1 => {
            *pos += 1;
            Ok(ListExpr::Digit(d))
        }
        _ => Err(Error::Parse {
            pos: *pos,
            msg: format!("unexpected token {tok:?}"),
        }),
    }
}

/// Evaluates a well-formed token sequence.
pub fn listops_oracle(tokens: &[impl AsRef<str>]) -> Result<u8> {
    Ok(parse(tokens)?.eval())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ListopsConfig {
    pub max_depth: usize,
    pub max_args: usize,
    /// Chance that an argument below the depth limit is itself a list.
    pub branch_prob: f64,
    /// Longest accepted token sequence; longer draws are rejected.
    pub max_len: Option<usize>,
}

impl Default for ListopsConfig {
    fn default() -> Self {
        ListopsConfig {
            max_depth: 4,
            max_args: 5,
            branch_prob: 0.25,
            max_len: Some(100),
        }
    }
}

impl ListopsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::config("max_depth must be at least 1"));
        }
        if self.max_args < 2 {
            return Err(Error::config("max_args must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.branch_prob) {
            return Err(Error::config("branch_prob must be in [0, 1]"));
        }
        if self.max_len.is_some_and(|l| l < 4) {
            return Err(Error::config("max_len must allow at least one list"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ListopsExample {
    pub tokens: Vec<String>,
    pub label: u8,
    pub tree: BinaryTree,
}

impl ListopsExample {
    pub fn from_expr(e: &ListExpr) -> Self {
        ListopsExample {
            tokens: e.tokens(),
            label: e.eval(),
            tree: e.gold_tree(),
        }
    }
}

fn gen_list(rng: &mut Rng, cfg: &ListopsConfig, depth: usize) -> ListExpr {
    let op = ListOp::ALL[rng.below(4)];
    let n = rng.inclusive(2, cfg.max_args);
    let args = (0..n)
        .map(|_| {
            if depth < cfg.max_depth && rng.bernoulli(cfg.branch_prob) {
                gen_list(rng, cfg, depth + 1)
            } else {
                ListExpr::Digit(rng.below(10) as u8)
            }
        })
        .collect();
    ListExpr::List(op, args)
}

/// Every token the generator can emit.
pub fn vocabulary() -> Vec<String> {
    let mut v: Vec<String> = ListOp::ALL.iter().map(|op| op.token().to_string()).collect();
    v.extend((0..10).map(|d| d.to_string()));
    v.push(CLOSE.to_string());
    v
}

/// Random expression; the root is always a list.
pub fn gen_expr(rng: &mut Rng, cfg: &ListopsConfig) -> ListExpr {
    loop {
        let e = gen_list(rng, cfg, 1);
        if cfg.max_len.is_none_or(|l| e.num_tokens() <= l) {
            return e;
        }
    }
}

pub fn gen_listops(rng: &mut Rng, count: usize, cfg: &ListopsConfig) -> Result<Vec<ListopsExample>> {
    cfg.validate()?;
    Ok((0..count).map(|_| ListopsExample::from_expr(&gen_expr(rng, cfg))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(listops_oracle(&toks("[MAX 2 9 [MIN 4 7 ] 0 ]")).unwrap(), 9);
        assert_eq!(listops_oracle(&toks("[SM 5 6 ]")).unwrap(), 1);
        assert_eq!(listops_oracle(&toks("[MED 1 9 2 ]")).unwrap(), 2);
        assert_eq!(listops_oracle(&toks("[MED 1 9 2 8 ]")).unwrap(), 2);
        assert_eq!(listops_oracle(&toks("[MIN 7 ]")).unwrap(), 7);
        assert_eq!(listops_oracle(&toks("[MAX 0 0 0 ]")).unwrap(), 0);
    }

    #[test]
    fn malformed_expressions_report_position() {
        let err = listops_oracle(&toks("[MAX 2 3")).unwrap_err();
        assert!(matches!(err, Error::Parse { pos: 3, .. }), "{err}");
        assert!(matches!(listops_oracle(&toks("[MAX 2 ] 3")), Err(Error::Parse { pos: 3, .. })));
        assert!(matches!(listops_oracle(&toks("[MAX 12 ]")), Err(Error::Parse { pos: 1, .. })));
    }

    #[test]
    fn gold_tree_is_left_branching_per_list() {
        let e = parse(&toks("[MAX 2 [MIN 4 ] ]")).unwrap();
        assert_eq!(
            e.gold_tree().render_indices(),
            "( ( ( w0 w1 ) ( ( w2 w3 ) w4 ) ) w5 )"
        );
    }
}
