//! Templated English-like corpus with gold dependency heads. Determiners and
//! verbs agree in number with their nouns and verbs select object classes,
//! so masked tokens are predictable from syntactic neighbours.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const EDGE_TYPES: [&str; 8] = ["det", "amod", "nsubj", "obj", "prep", "pobj", "punct", "root"];

/// Singular/plural pairs.
const ANIMATE: [(&str, &str); 6] = [
    ("dog", "dogs"),
    ("cat", "cats"),
    ("farmer", "farmers"),
    ("child", "children"),
    ("teacher", "teachers"),
    ("bird", "birds"),
];
const FOOD: [(&str, &str); 3] = [("apple", "apples"), ("cake", "cakes"), ("egg", "eggs")];
const TEXT: [(&str, &str); 3] = [("book", "books"), ("letter", "letters"), ("poem", "poems")];
const PLACE: [(&str, &str); 3] = [("house", "houses"), ("tree", "trees"), ("river", "rivers")];

/// Third-person singular and plain forms, with the object class each takes.
const VERBS: [(&str, &str, Class); 5] = [
    ("eats", "eat", Class::Food),
    ("reads", "read", Class::Text),
    ("writes", "write", Class::Text),
    ("sees", "see", Class::Animate),
    ("chases", "chase", Class::Animate),
];
const ADJECTIVES: [&str; 6] = ["big", "small", "old", "young", "happy", "red"];
const PREPOSITIONS: [&str; 3] = ["near", "behind", "under"];
const DET_SG: [&str; 3] = ["the", "a", "this"];
const DET_PL: [&str; 3] = ["the", "these", "some"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Animate,
    Food,
    Text,
    Place,
}

fn nouns(class: Class) -> &'static [(&'static str, &'static str)] {
    match class {
        Class::Animate => &ANIMATE,
        Class::Food => &FOOD,
        Class::Text => &TEXT,
        Class::Place => &PLACE,
    }
}

/// `heads` are 1-indexed with 0 marking the root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySentence {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub heads: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub types: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub adj_prob: f64,
    pub pp_prob: f64,
    pub plural_prob: f64,
    /// End every sentence with a `.` attached to the verb. Off by default:
    /// a token present in every sentence lets the parser route everything
    /// through it.
    #[serde(default)]
    pub punctuation: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            adj_prob: 0.4,
            pp_prob: 0.3,
            plural_prob: 0.5,
            punctuation: false,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, p) in [
            ("adj_prob", self.adj_prob),
            ("pp_prob", self.pp_prob),
            ("plural_prob", self.plural_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{k} must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

struct Builder {
    tokens: Vec<String>,
    heads: Vec<usize>,
    types: Vec<&'static str>,
}

impl Builder {
    /// Pushes a word whose head is filled in later; returns its 0-based index.
    fn push(&mut self, tok: &str, ty: &'static str) -> usize {
        self.tokens.push(tok.to_string());
        self.heads.push(usize::MAX);
        self.types.push(ty);
        self.tokens.len() - 1
    }

    fn attach(&mut self, dep: usize, head: Option<usize>) {
        self.heads[dep] = head.map_or(0, |h| h + 1);
    }

    /// Determiner, optional adjective and noun; returns the noun index.
    fn noun_phrase(&mut self, rng: &mut Rng, cfg: &ToyConfig, class: Class, plural: bool, ty: &'static str) -> usize {
        let dets = if plural { &DET_PL } else { &DET_SG };
        let det = self.push(dets[rng.below(dets.len())], "det");
        let adj = rng
            .bernoulli(cfg.adj_prob)
            .then(|| self.push(ADJECTIVES[rng.below(ADJECTIVES.len())], "amod"));
        let pair = nouns(class)[rng.below(nouns(class).len())];
        let noun = self.push(if plural { pair.1 } else { pair.0 }, ty);
        self.attach(det, Some(noun));
        if let Some(a) = adj {
            self.attach(a, Some(noun));
        }
        noun
    }
}

pub fn gen_toy_sentence(rng: &mut Rng, cfg: &ToyConfig) -> ToySentence {
    let mut b = Builder {
        tokens: Vec::new(),
        heads: Vec::new(),
        types: Vec::new(),
    };
    let subj_plural = rng.bernoulli(cfg.plural_prob);
    let subj = b.noun_phrase(rng, cfg, Class::Animate, subj_plural, "nsubj");
    if rng.bernoulli(cfg.pp_prob) {
        let prep = b.push(PREPOSITIONS[rng.below(PREPOSITIONS.len())], "prep");
        let plural = rng.bernoulli(cfg.plural_prob);
        let pobj = b.noun_phrase(rng, cfg, Class::Place, plural, "pobj");
        b.attach(prep, Some(subj));
        b.attach(pobj, Some(prep));
    }
    let (sg, pl, class) = VERBS[rng.below(VERBS.len())];
    let verb = b.push(if subj_plural { pl } else { sg }, "root");
    b.attach(verb, None);
    b.attach(subj, Some(verb));
    let obj_plural = rng.bernoulli(cfg.plural_prob);
    let obj = b.noun_phrase(rng, cfg, class, obj_plural, "obj");
    b.attach(obj, Some(verb));
    if cfg.punctuation {
        let punct = b.push(".", "punct");
        b.attach(punct, Some(verb));
    }
    ToySentence {
        tokens: b.tokens,
        heads: b.heads,
        types: b.types.into_iter().map(String::from).collect(),
    }
}

pub fn gen_toy_corpus(rng: &mut Rng, count: usize, cfg: &ToyConfig) -> Result<Vec<ToySentence>> {
    cfg.validate()?;
    Ok((0..count).map(|_| gen_toy_sentence(rng, cfg)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_root_and_valid_heads() {
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let s = gen_toy_sentence(&mut rng, &ToyConfig::default());
            let t = s.tokens.len();
            assert_eq!(s.heads.iter().filter(|&&h| h == 0).count(), 1);
            assert!(s.heads.iter().enumerate().all(|(i, &h)| h <= t && h != i + 1));
            assert!(s.types.iter().all(|ty| EDGE_TYPES.contains(&ty.as_str())));
            // every word reaches the root
            for start in 0..t {
                let (mut i, mut steps) = (start, 0);
                while s.heads[i] != 0 {
                    i = s.heads[i] - 1;
                    steps += 1;
                    assert!(steps <= t);
                }
            }
        }
    }

    #[test]
    fn agreement() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let s = gen_toy_sentence(&mut rng, &ToyConfig::default());
            let v = s.heads.iter().position(|&h| h == 0).unwrap();
            let subj = s.types.iter().position(|t| t == "nsubj").unwrap();
            let plural = ANIMATE.iter().any(|p| p.1 == s.tokens[subj]);
            let singular_verb = VERBS.iter().any(|p| p.0 == s.tokens[v]);
            assert_ne!(plural, singular_verb);
        }
    }
}
