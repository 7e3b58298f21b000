//! Head-selective parser: soft-tag embeddings, a BiLSTM encoder and
//! bilinear head scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LstmCell, Linear};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParserConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_tags: usize,
    pub lstm_layers: usize,
}

#[derive(Clone, Debug)]
pub struct Parser {
    pub config: ParserConfig,
    pub vocab_size: usize,
    pub unk: usize,
    pub words: ParamId,
    pub tags: ParamId,
    pub tag_logits: ParamId,
    /// `(forward, backward)` cells per layer.
    pub lstm: Vec<(LstmCell, LstmCell)>,
    pub head: Linear,
    pub dep: Linear,
}

impl Parser {
    pub fn new(
        config: ParserConfig,
        vocab_size: usize,
        unk: usize,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden_dim == 0 || config.num_tags == 0 || config.lstm_layers == 0 {
            return Err(Error::config("parser dimensions must be positive"));
        }
        if unk >= vocab_size {
            return Err(Error::config("unknown-token id outside the vocabulary"));
        }
        let e = config.embed_dim;
        let hd = config.hidden_dim;
        let words = store.add_uniform("parser.words", &[vocab_size, e], 1, rng)?;
        let tags = store.add_uniform("parser.tags", &[config.num_tags, e], 1, rng)?;
        let tag_logits = store.add_zeros("parser.tag_logits", &[vocab_size, config.num_tags])?;
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let input = if l == 0 { e } else { 2 * hd };
            lstm.push((
                LstmCell::new(store, rng, &format!("parser.lstm{l}.fwd"), input, hd)?,
                LstmCell::new(store, rng, &format!("parser.lstm{l}.bwd"), input, hd)?,
            ));
        }
        let head = Linear::new(store, rng, "parser.head", 2 * hd, hd, true)?;
        let dep = Linear::new(store, rng, "parser.dep", 2 * hd, hd, true)?;
        Ok(Parser {
            config,
            vocab_size,
            unk,
            words,
            tags,
            tag_logits,
            lstm,
            head,
            dep,
        })
    }

    fn clamp_ids(&self, tokens: &[usize]) -> Vec<usize> {
        tokens
            .iter()
            .map(|&t| if t < self.vocab_size { t } else { self.unk })
            .collect()
    }

    /// `e_w + softmax(tau_w) E_tag` per token, `[T, embed_dim]`. Ids outside
    /// the vocabulary use the unknown token.
    pub fn embed(&self, tape: &mut Tape, tokens: &[usize]) -> Result<Var> {
        let ids = self.clamp_ids(tokens);
        let words = tape.param(self.words);
        let w = tape.embedding(words, &ids)?;
        let tau = tape.param(self.tag_logits);
        let tau = tape.embedding(tau, &ids)?;
        let ptag = tape.softmax(tau, 1)?;
        let tags = tape.param(self.tags);
        let t = tape.matmul(ptag, tags)?;
        tape.add(w, t)
    }

    /// BiLSTM states `[T, 2 * hidden]`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n = tape.shape(x)[0];
        let hd = self.config.hidden_dim;
        let mut cur = x;
        for (fwd, bwd) in &self.lstm {
            let rows: Vec<Var> = (0..n).map(|i| tape.slice(cur, 0, i, 1)).collect::<Result<_>>()?;
            let zero = tape.constant(Tensor::zeros(&[1, hd]))?;
            let (mut h, mut c) = (zero, zero);
            let mut hf = Vec::with_capacity(n);
            for &r in &rows {
                (h, c) = fwd.step(tape, r, h, c)?;
                hf.push(h);
            }
            let (mut h, mut c) = (zero, zero);
            let mut hb = vec![zero; n];
            for i in (0..n).rev() {
                (h, c) = bwd.step(tape, rows[i], h, c)?;
                hb[i] = h;
            }
            let f = tape.concat(&hf, 0)?;
            let b = tape.concat(&hb, 0)?;
            cur = tape.concat(&[f, b], 1)?;
        }
        Ok(cur)
    }

    /// Head distribution `p[i][j]` (token `j` heads token `i`), `[T, T]`
    /// with zero diagonal.
    pub fn forward(&self, tape: &mut Tape, tokens: &[usize]) -> Result<Var> {
        let n = tokens.len();
        if n < 2 {
            return Err(Error::Degenerate(format!(
                "a sentence of {n} token(s) has no possible head"
            )));
        }
        let x = self.embed(tape, tokens)?;
        let h = self.encode(tape, x)?;
        let hh = self.head.forward(tape, h)?;
        let hd = self.dep.forward(tape, h)?;
        let e = tape.matmul_nt(hd, hh)?;
        let e = tape.scale(e, 1.0 / (self.config.hidden_dim as f64).sqrt())?;
        let mask = tape.constant(off_diagonal(n))?;
        tape.masked_softmax(e, mask, 1)
    }
}

/// `1 - I`.
pub fn off_diagonal(n: usize) -> Tensor {
    let data = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect();
    Tensor::new(vec![n, n], data).expect("square")
}

/// `m = p + p^T - p * p^T` on the tape.
pub fn dependency_mask_var(tape: &mut Tape, p: Var) -> Result<Var> {
    let pt = tape.transpose(p)?;
    let s = tape.add(p, pt)?;
    let prod = tape.mul(p, pt)?;
    tape.sub(s, prod)
}

/// Fuzzy-or mask of a square probability matrix.
pub fn dependency_mask(p: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = p.len();
    if p.iter().any(|r| r.len() != n) {
        return Err(Error::contract("dependency mask needs a square matrix"));
    }
    if p.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::contract("probabilities must lie in [0, 1]"));
    }
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { p[i][j] + p[j][i] - p[i][j] * p[j][i] })
                .collect()
        })
        .collect())
}
