//! Unsupervised dependency graph network: a head-selective parser feeding
//! a fuzzy-or dependency mask into gated, competing graph layers trained
//! with a masked language model objective.

pub mod analysis;
pub mod dgn;
pub mod extract;
pub mod parser;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use analysis::{channel_type_pcc, pearson};
pub use dgn::{Activation, Competition, DgnConfig, DgnLayer, LayerAttention, PositionMode};
pub use extract::{extract_argmax, extract_chuliu, to_conll_heads};
pub use parser::{dependency_mask, Parser, ParserConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UdgnConfig {
    pub parser: ParserConfig,
    pub dgn: DgnConfig,
}

#[derive(Clone, Debug)]
pub struct Udgn {
    pub config: UdgnConfig,
    pub vocab_size: usize,
    pub parser: Parser,
    pub embedding: ParamId,
    pub positions: Option<ParamId>,
    pub layers: Vec<DgnLayer>,
    pub output: Linear,
}

/// Tape handles from one sentence.
pub struct UdgnRun {
    pub p: Var,
    pub m: Var,
    /// `[T, D]` final states.
    pub hidden: Var,
    /// `[T, vocab]`.
    pub logits: Var,
    pub attention: Vec<LayerAttention>,
}

/// Values of one parsed sentence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepParse {
    pub p: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    /// `heads[i]` is `None` for the root.
    pub heads: Vec<Option<usize>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace the dependency mask by zeros.
    pub zero_mask: bool,
}

pub fn rows(tape: &Tape, v: Var) -> Vec<Vec<f64>> {
    let s = tape.shape(v);
    let c = s[s.len() - 1];
    tape.value(v).chunks(c).map(<[f64]>::to_vec).collect()
}

impl Udgn {
    pub fn new(
        config: UdgnConfig,
        vocab_size: usize,
        unk: usize,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.dgn.validate()?;
        let parser = Parser::new(config.parser.clone(), vocab_size, unk, store, rng)?;
        let d = config.dgn.hidden_dim;
        let embedding = store.add_uniform("dgn.embedding", &[vocab_size, d], 1, rng)?;
        let positions = match config.dgn.position {
            PositionMode::Absolute => Some(store.add_uniform("dgn.positions", &[config.dgn.max_len, d], 1, rng)?),
            PositionMode::RelativeBias => None,
        };
        let layers = (0..config.dgn.layers)
            .map(|l| DgnLayer::new(store, rng, &format!("dgn.l{l}"), &config.dgn))
            .collect::<Result<_>>()?;
        let output = Linear::new(store, rng, "dgn.out", d, vocab_size, true)?;
        Ok(Udgn {
            config,
            vocab_size,
            parser,
            embedding,
            positions,
            layers,
            output,
        })
    }

    pub fn forward(&self, tape: &mut Tape, tokens: &[usize], opts: ForwardOptions) -> Result<UdgnRun> {
        let t = tokens.len();
        let p = self.parser.forward(tape, tokens)?;
        let m = if opts.zero_mask {
            tape.constant(Tensor::zeros(&[t, t]))?
        } else {
            parser::dependency_mask_var(tape, p)?
        };
        let ids: Vec<usize> = tokens
            .iter()
            .map(|&x| if x < self.vocab_size { x } else { self.parser.unk })
            .collect();
        let table = tape.param(self.embedding);
        let mut h = tape.embedding(table, &ids)?;
        if let Some(pos) = self.positions {
            if t > self.config.dgn.max_len {
                return Err(Error::contract(format!(
                    "sentence of {t} tokens exceeds max_len {}",
                    self.config.dgn.max_len
                )));
            }
            let pos = tape.param(pos);
            let idx: Vec<usize> = (0..t).collect();
            let pe = tape.embedding(pos, &idx)?;
            h = tape.add(h, pe)?;
        }
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (nh, att) = layer.forward(tape, &self.config.dgn, h, m)?;
            h = nh;
            attention.push(att);
        }
        let logits = self.output.forward(tape, h)?;
        Ok(UdgnRun {
            p,
            m,
            hidden: h,
            logits,
            attention,
        })
    }

    /// Mean NLL at `positions` of the original `targets`, reading the
    /// (masked) `inputs`. `None` when there is nothing to predict.
    pub fn mlm_loss(
        &self,
        tape: &mut Tape,
        inputs: &[usize],
        targets: &[usize],
        positions: &[usize],
        opts: ForwardOptions,
    ) -> Result<Option<Var>> {
        if positions.is_empty() {
            return Ok(None);
        }
        let run = self.forward(tape, inputs, opts)?;
        let lp = tape.log_softmax(run.logits, 1)?;
        let rows: Vec<Var> = positions
            .iter()
            .map(|&i| tape.slice(lp, 0, i, 1))
            .collect::<Result<_>>()?;
        let sel = tape.concat(&rows, 0)?;
        let tgt: Vec<usize> = positions.iter().map(|&i| targets[i]).collect();
        let picked = tape.pick(sel, &tgt)?;
        let mean = tape.mean_all(picked)?;
        Ok(Some(tape.scale(mean, -1.0)?))
    }

    /// Head distribution, mask and Chu-Liu tree for one sentence.
    pub fn parse(&self, store: &ParamStore, tokens: &[usize]) -> Result<DepParse> {
        let mut tape = Tape::with_params(store);
        let p = self.parser.forward(&mut tape, tokens)?;
        let p = rows(&tape, p);
        let m = dependency_mask(&p)?;
        let heads = extract_chuliu(&p)?;
        Ok(DepParse { p, m, heads })
    }

    /// Channel weights `a_hat[k][i][j]` of `layer` for one sentence.
    pub fn channel_weights(&self, store: &ParamStore, tokens: &[usize], layer: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        if layer >= self.layers.len() {
            return Err(Error::config(format!("layer {layer} out of {}", self.layers.len())));
        }
        let mut tape = Tape::with_params(store);
        let run = self.forward(&mut tape, tokens, ForwardOptions::default())?;
        Ok(run.attention[layer].a_hat.iter().map(|&v| rows(&tape, v)).collect())
    }
}
