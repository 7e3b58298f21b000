//! Propositional formulas over six variables and the seven set-theoretic
//! relations between their truth sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const VARIABLES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// Every token a rendered formula can contain.
pub fn vocabulary() -> Vec<String> {
    let mut v: Vec<String> = VARIABLES.iter().map(|s| s.to_string()).collect();
    v.extend(["and", "or", "not", "(", ")"].map(String::from));
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    And,
    Or,
}

impl BinOp {
    pub fn token(self) -> &'static str {
        match self {
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula {
    Var(u8),
    Not(Box<Formula>),
    Bin(BinOp, Box<Formula>, Box<Formula>),
}

/// Assignment `x` (0..64) sets variable `k` true iff bit `k` of `x` is set.
fn var_mask(k: u8) -> u64 {
    (0..64u32).filter(|x| (x >> k) & 1 == 1).fold(0, |m, x| m | (1u64 << x))
}

impl Formula {
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn bin(op: BinOp, l: Formula, r: Formula) -> Self {
        Formula::Bin(op, Box::new(l), Box::new(r))
    }

    /// Truth table as a bit set over all 64 assignments.
    pub fn truth(&self) -> u64 {
        match self {
            Formula::Var(k) => var_mask(*k),
            Formula::Not(f) => !f.truth(),
            Formula::Bin(BinOp::And, l, r) => l.truth() & r.truth(),
            Formula::Bin(BinOp::Or, l, r) => l.truth() | r.truth(),
        }
    }

    /// Number of `and`, `or` and `not` operators.
    pub fn ops(&self) -> usize {
        match self {
            Formula::Var(_) => 0,
            Formula::Not(f) => 1 + f.ops(),
            Formula::Bin(_, l, r) => 1 + l.ops() + r.ops(),
        }
    }

    /// Bracketed rendering, e.g. `( a ( and ( not b ) ) )`. The outermost
    /// binary node omits its brackets when `top` is set.
    fn render_into(&self, out: &mut Vec<String>, top: bool) {
        match self {
            Formula::Var(k) => out.push(VARIABLES[*k as usize].to_string()),
            Formula::Not(f) => {
                out.push("(".into());
                out.push("not".into());
                f.render_into(out, false);
                out.push(")".into());
            }
            Formula::Bin(op, l, r) => {
                if !top {
                    out.push("(".into());
                }
                l.render_into(out, false);
                out.push("(".into());
                out.push(op.token().into());
                r.render_into(out, false);
                out.push(")".into());
                if !top {
                    out.push(")".into());
                }
            }
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.render_into(&mut out, true);
        out
    }

    pub fn render(&self) -> String {
        self.tokens().join(" ")
    }

    /// Whether any subformula satisfies `pred`.
    pub fn any(&self, pred: &dyn Fn(&Formula) -> bool) -> bool {
        pred(self)
            || match self {
                Formula::Var(_) => false,
                Formula::Not(f) => f.any(pred),
                Formula::Bin(_, l, r) => l.any(pred) || r.any(pred),
            }
    }
}

/// Parses both `X ( op Y )` and infix `X op Y` forms, with any number of
/// redundant brackets.
pub fn parse_formula(text: &str) -> Result<Formula> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    parse_tokens(&toks)
}

pub fn parse_tokens(toks: &[impl AsRef<str>]) -> Result<Formula> {
    let toks: Vec<&str> = toks.iter().map(|t| t.as_ref()).collect();
    let mut p = FormulaParser { toks: &toks, pos: 0 };
    let f = p.expr()?;
    if p.pos != toks.len() {
        return Err(p.err("trailing tokens"));
    }
    Ok(f)
}

struct FormulaParser<'a> {
    toks: &'a [&'a str],
    pos: usize,
}

impl FormulaParser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn peek(&self, k: usize) -> Option<&str> {
        self.toks.get(self.pos + k).copied()
    }

    fn op_at(&self, k: usize) -> Option<BinOp> {
        match self.peek(k) {
            Some("and") => Some(BinOp::And),
            Some("or") => Some(BinOp::Or),
            _ => None,
        }
    }

    fn expect_close(&mut self) -> Result<()> {
        if self.peek(0) == Some(")") {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err("expected ')'"))
        }
    }

    /// A sequence ending before `)` or the end of input.
    fn expr(&mut self) -> Result<Formula> {
        if self.peek(0) == Some("not") {
            self.pos += 1;
            return Ok(Formula::not(self.expr()?));
        }
        let left = self.operand()?;
        if let Some(op) = self.op_at(0) {
            self.pos += 1;
            let right = self.expr()?;
            return Ok(Formula::bin(op, left, right));
        }
        if self.peek(0) == Some("(") {
            if let Some(op) = self.op_at(1) {
                self.pos += 2;
                let right = self.expr()?;
                self.expect_close()?;
                return Ok(Formula::bin(op, left, right));
            }
        }
        Ok(left)
    }

    fn operand(&mut self) -> Result<Formula> {
        match self.peek(0) {
            Some("(") => {
                self.pos += 1;
                let f = self.expr()?;
                self.expect_close()?;
                Ok(f)
            }
            Some(v) => match VARIABLES.iter().position(|x| *x == v) {
                Some(k) => {
                    self.pos += 1;
                    Ok(Formula::Var(k as u8))
                }
                None => Err(self.err(&format!("unexpected token {v:?}"))),
            },
            None => Err(self.err("unexpected end of formula")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Equivalence,
    ForwardEntailment,
    ReverseEntailment,
    Negation,
    Alternation,
    Cover,
    Independence,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::Equivalence,
        Relation::ForwardEntailment,
        Relation::ReverseEntailment,
        Relation::Negation,
        Relation::Alternation,
        Relation::Cover,
        Relation::Independence,
    ];

    pub fn index(self) -> usize {
        Relation::ALL.iter().position(|&r| r == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Equivalence => "equivalence",
            Relation::ForwardEntailment => "forward-entailment",
            Relation::ReverseEntailment => "reverse-entailment",
            Relation::Negation => "negation",
            Relation::Alternation => "alternation",
            Relation::Cover => "cover",
            Relation::Independence => "independence",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Relation::ALL.into_iter().find(|r| r.name() == s)
    }

    /// Decision from `(both true, only first, only second, both false)`.
    pub fn from_counts(both: u32, only1: u32, only2: u32, neither: u32) -> Self {
        if only1 == 0 && only2 == 0 {
            Relation::Equivalence
        } else if only1 == 0 {
            Relation::ForwardEntailment
        } else if only2 == 0 {
            Relation::ReverseEntailment
        } else if both == 0 && neither == 0 {
            Relation::Negation
        } else if both == 0 {
            Relation::Alternation
        } else if neither == 0 {
            Relation::Cover
        } else {
            Relation::Independence
        }
    }
}

pub fn relation_of(f1: &Formula, f2: &Formula) -> Relation {
    let (t1, t2) = (f1.truth(), f2.truth());
    Relation::from_counts(
        (t1 & t2).count_ones(),
        (t1 & !t2).count_ones(),
        (!t1 & t2).count_ones(),
        (!t1 & !t2).count_ones(),
    )
}

pub fn logic_relation_oracle(f1: &str, f2: &str) -> Result<Relation> {
    Ok(relation_of(&parse_formula(f1)?, &parse_formula(f2)?))
}

/// Random formula with exactly `ops` operators.
pub fn gen_formula(rng: &mut Rng, ops: usize) -> Formula {
    if ops == 0 {
        return Formula::Var(rng.below(VARIABLES.len()) as u8);
    }
    if rng.bernoulli(0.25) {
        return Formula::not(gen_formula(rng, ops - 1));
    }
    let op = if rng.bernoulli(0.5) { BinOp::And } else { BinOp::Or };
    let left = rng.inclusive(0, ops - 1);
    Formula::bin(op, gen_formula(rng, left), gen_formula(rng, ops - 1 - left))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicExample {
    pub tokens: [Vec<String>; 2],
    pub label: Relation,
    pub ops: [usize; 2],
}

impl LogicExample {
    pub fn new(f1: &Formula, f2: &Formula) -> Self {
        LogicExample {
            tokens: [f1.tokens(), f2.tokens()],
            label: relation_of(f1, f2),
            ops: [f1.ops(), f2.ops()],
        }
    }

    /// Length bucket: the larger operator count of the pair.
    pub fn bucket(&self) -> usize {
        self.ops[0].max(self.ops[1])
    }

    pub fn formulas(&self) -> Result<(Formula, Formula)> {
        Ok((parse_tokens(&self.tokens[0])?, parse_tokens(&self.tokens[1])?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicConfig {
    pub min_ops: usize,
    pub max_ops: usize,
    /// Upper bound on any one relation's share of the output; draws of an
    /// over-represented relation are rejected. 1.0 disables balancing.
    pub max_class_share: f64,
}

impl Default for LogicConfig {
    fn default() -> Self {
        LogicConfig {
            min_ops: 0,
            max_ops: 6,
            max_class_share: 1.0,
        }
    }
}

impl LogicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_ops > 12 || self.min_ops > self.max_ops {
            return Err(Error::config("operator counts must satisfy min_ops <= max_ops <= 12"));
        }
        if !(self.max_class_share > 1.0 / 7.0 && self.max_class_share <= 1.0) {
            return Err(Error::config("max_class_share must be in (1/7, 1]"));
        }
        Ok(())
    }
}

/// Pairs whose larger operator count is uniform in `min_ops..=max_ops`;
/// the other side gets a uniform count up to that bucket.
pub fn gen_logic(rng: &mut Rng, count: usize, cfg: &LogicConfig) -> Result<Vec<LogicExample>> {
    cfg.validate()?;
    let cap = (cfg.max_class_share * count as f64).ceil() as usize;
    let mut per_class = [0usize; 7];
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::config(format!(
                "max_class_share {} cannot be met for these operator counts",
                cfg.max_class_share
            )));
        }
        let bucket = rng.inclusive(cfg.min_ops, cfg.max_ops);
        let other = rng.inclusive(0, bucket);
        let (n1, n2) = if rng.bernoulli(0.5) { (bucket, other) } else { (other, bucket) };
        let f1 = gen_formula(rng, n1);
        let f2 = gen_formula(rng, n2);
        let ex = LogicExample::new(&f1, &f2);
        let k = ex.label.index();
        if per_class[k] >= cap {
            continue;
        }
        per_class[k] += 1;
        out.push(ex);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    A,
    B,
    C,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Split::A),
            "B" | "b" => Ok(Split::B),
            "C" | "c" => Ok(Split::C),
            _ => Err(Error::config(format!("unknown split {s:?}"))),
        }
    }
}

impl Split {
    /// Whether `f` contains `X ( op ( not Y ) )` for the split's operators
    /// (and the literal `a` for split A).
    pub fn matches(self, f: &Formula) -> bool {
        f.any(&|g| match g {
            Formula::Bin(op, _, r) => {
                let op_ok = match self {
                    Split::A | Split::B => *op == BinOp::And,
                    Split::C => true,
                };
                op_ok
                    && match r.as_ref() {
                        Formula::Not(inner) => self != Split::A || **inner == Formula::Var(0),
                        _ => false,
                    }
            }
            _ => false,
        })
    }
}

/// `(train, test)`: an example is held out when either side matches.
pub fn filter_systematic_split(
    examples: &[LogicExample],
    split: Split,
) -> Result<(Vec<LogicExample>, Vec<LogicExample>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ex in examples {
        let (f1, f2) = ex.formulas()?;
        if split.matches(&f1) || split.matches(&f2) {
            test.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    Ok((train, test))
}
