//! ON-LSTM: an LSTM whose cell updates are structured by cumulative-softmax
//! master gates, and the syntactic distances read off those gates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnLstmConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub chunk: usize,
    pub num_layers: usize,
    /// Applied to the hidden states passed between layers during training.
    pub dropout: f64,
}

impl OnLstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.chunk == 0 || self.num_layers == 0 {
            return Err(Error::config("ON-LSTM dimensions must be positive"));
        }
        if !self.hidden_dim.is_multiple_of(self.chunk) {
            return Err(Error::config(format!(
                "hidden_dim {} is not a multiple of chunk {}",
                self.hidden_dim, self.chunk
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn master_dim(&self) -> usize {
        self.hidden_dim / self.chunk
    }
}

/// `cumsum(softmax(logits))`.
pub fn cummax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::contract("cummax of an empty vector"));
    }
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    let mut acc = 0.0;
    Ok(e.iter()
        .map(|v| {
            acc += v / s;
            acc
        })
        .collect())
}

/// Combined gates `(f_hat, i_hat, omega)` from chunk-expanded master gates
/// and the ordinary forget/input gates.
pub fn combine_master_gates(
    mf: &[f64],
    mi: &[f64],
    f: &[f64],
    i: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = mf.len();
    if mi.len() != n || f.len() != n || i.len() != n {
        return Err(Error::contract(format!(
            "gate lengths differ: {} {} {} {}",
            n,
            mi.len(),
            f.len(),
            i.len()
        )));
    }
    let omega: Vec<f64> = mf.iter().zip(mi).map(|(a, b)| a * b).collect();
    let fh = (0..n).map(|k| f[k] * omega[k] + (mf[k] - omega[k])).collect();
    let ih = (0..n).map(|k| i[k] * omega[k] + (mi[k] - omega[k])).collect();
    Ok((fh, ih, omega))
}

#[derive(Clone, Debug)]
pub struct OnLstmLayer {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
}

/// Tape handles produced by one step of one layer.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub h: Var,
    pub c: Var,
    pub master_forget: Var,
    pub master_input: Var,
    /// `[batch, 1]`.
    pub distance: Var,
}

#[derive(Clone, Debug)]
pub struct OnLstm {
    pub config: OnLstmConfig,
    pub layers: Vec<OnLstmLayer>,
}

/// Per-layer hidden states and distances for one sentence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Encoded {
    /// `hidden[layer][t]`.
    pub hidden: Vec<Vec<Vec<f64>>>,
    /// `distances[layer][k]` sits between tokens `k` and `k + 1`.
    pub distances: Vec<Vec<f64>>,
}

impl OnLstm {
    pub fn new(config: OnLstmConfig, store: &mut ParamStore, rng: &mut Rng, name: &str) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let width = 4 * d + 2 * config.master_dim();
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let input_dim = if l == 0 { config.input_dim } else { d };
            layers.push(OnLstmLayer {
                w: store.add_uniform(format!("{name}.l{l}.w"), &[input_dim, width], input_dim, rng)?,
                u: store.add_uniform(format!("{name}.l{l}.u"), &[d, width], d, rng)?,
                b: store.add_zeros(format!("{name}.l{l}.b"), &[width])?,
                input_dim,
            });
        }
        Ok(OnLstm { config, layers })
    }

    /// One step of `layer` on `[batch, in]` inputs.
    pub fn step(&self, tape: &mut Tape, layer: usize, x: Var, h: Var, c: Var) -> Result<StepVars> {
        let d = self.config.hidden_dim;
        let dm = self.config.master_dim();
        let p = &self.layers[layer];
        let (w, u, b) = (tape.param(p.w), tape.param(p.u), tape.param(p.b));
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let pre = tape.add(xw, hu)?;
        let pre = tape.add(pre, b)?;
        let gate = |tape: &mut Tape, k: usize| tape.slice(pre, 1, k * d, d);
        let f = gate(tape, 0)?;
        let f = tape.sigmoid(f)?;
        let i = gate(tape, 1)?;
        let i = tape.sigmoid(i)?;
        let o = gate(tape, 2)?;
        let o = tape.sigmoid(o)?;
        let chat = gate(tape, 3)?;
        let chat = tape.tanh(chat)?;

        let mf_logits = tape.slice(pre, 1, 4 * d, dm)?;
        let mf = tape.softmax(mf_logits, 1)?;
        let mf = tape.cumsum(mf, 1, false)?;
        let mi_logits = tape.slice(pre, 1, 4 * d + dm, dm)?;
        let mi = tape.softmax(mi_logits, 1)?;
        let mi = tape.cumsum(mi, 1, false)?;
        let mi = tape.one_minus(mi)?;

        let mf_sum = tape.sum(mf, 1)?;
        let distance = tape.scale(mf_sum, -1.0)?;
        let distance = tape.add_scalar(distance, dm as f64)?;

        let c_mf = tape.repeat_interleave(mf, self.config.chunk)?;
        let c_mi = tape.repeat_interleave(mi, self.config.chunk)?;
        let omega = tape.mul(c_mf, c_mi)?;
        let f_omega = tape.mul(f, omega)?;
        let mf_rest = tape.sub(c_mf, omega)?;
        let f_hat = tape.add(f_omega, mf_rest)?;
        let i_omega = tape.mul(i, omega)?;
        let mi_rest = tape.sub(c_mi, omega)?;
        let i_hat = tape.add(i_omega, mi_rest)?;

        let keep = tape.mul(f_hat, c)?;
        let write = tape.mul(i_hat, chat)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(StepVars {
            h,
            c,
            master_forget: mf,
            master_input: mi,
            distance,
        })
    }

    /// Runs every layer over `inputs` (one `[batch, input_dim]` var per
    /// step) from zero state. Returns `steps[layer][t]`. Dropout between
    /// layers is applied only when `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: &[Var],
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<Vec<Vec<StepVars>>> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::contract("ON-LSTM over an empty sequence"))?;
        let batch = tape.shape(first)[0];
        let d = self.config.hidden_dim;
        let mut xs: Vec<Var> = inputs.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let mut h = tape.constant(Tensor::zeros(&[batch, d]))?;
            let mut c = tape.constant(Tensor::zeros(&[batch, d]))?;
            let mut steps = Vec::with_capacity(xs.len());
            for &x in &xs {
                let s = self.step(tape, l, x, h, c)?;
                h = s.h;
                c = s.c;
                steps.push(s);
            }
            xs = steps.iter().map(|s| s.h).collect();
            if l + 1 < self.layers.len() && self.config.dropout > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let keep = 1.0 - self.config.dropout;
                    for x in xs.iter_mut() {
                        let mask: Vec<f64> = (0..batch * d)
                            .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                            .collect();
                        let m = tape.constant(Tensor::new(vec![batch, d], mask)?)?;
                        *x = tape.mul(*x, m)?;
                    }
                }
            }
            out.push(steps);
        }
        Ok(out)
    }
}

/// Token-level ON-LSTM language model.
#[derive(Clone, Debug)]
pub struct OnLstmLm {
    pub vocab_size: usize,
    pub embedding: ParamId,
    pub encoder: OnLstm,
    pub output: Linear,
}

impl OnLstmLm {
    pub fn new(vocab_size: usize, config: OnLstmConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::config("vocabulary is empty"));
        }
        let embedding = store.add_uniform("onlstm.embedding", &[vocab_size, config.input_dim], 1, rng)?;
        let hidden = config.hidden_dim;
        let encoder = OnLstm::new(config, store, rng, "onlstm")?;
        let output = Linear::new(store, rng, "onlstm.out", hidden, vocab_size, true)?;
        Ok(OnLstmLm {
            vocab_size,
            embedding,
            encoder,
            output,
        })
    }

    /// Embeds a batch of equal-length sequences; returns one `[batch, dim]`
    /// var per position.
    pub fn embed(&self, tape: &mut Tape, batch: &[&[usize]]) -> Result<Vec<Var>> {
        let len = batch.first().map_or(0, |s| s.len());
        if len == 0 || batch.iter().any(|s| s.len() != len) {
            return Err(Error::contract("batch sequences must be non-empty and of equal length"));
        }
        let table = tape.param(self.embedding);
        (0..len)
            .map(|t| {
                let ids: Vec<usize> = batch.iter().map(|s| s[t]).collect();
                tape.embedding(table, &ids)
            })
            .collect()
    }

    /// Mean next-token NLL over a batch of equal-length sequences (length at
    /// least 2).
    pub fn loss(&self, tape: &mut Tape, batch: &[&[usize]], dropout_rng: Option<&mut Rng>) -> Result<Var> {
        let len = batch.first().map_or(0, |s| s.len());
        if len < 2 {
            return Err(Error::contract("language modeling needs sequences of length >= 2"));
        }
        let xs = self.embed(tape, batch)?;
        let steps = self.encoder.forward(tape, &xs[..len - 1], dropout_rng)?;
        let top = steps.last().expect("at least one layer");
        let mut losses = Vec::with_capacity(len - 1);
        for (t, s) in top.iter().enumerate() {
            let logits = self.output.forward(tape, s.h)?;
            let targets: Vec<usize> = batch.iter().map(|seq| seq[t + 1]).collect();
            losses.push(tape.cross_entropy(logits, &targets)?);
        }
        let stacked = stack_scalars(tape, &losses)?;
        tape.mean_all(stacked)
    }

    /// Hidden states and per-layer distances for one sentence. The
    /// distance produced at the first token has no boundary and is dropped.
    pub fn encode_sequence(&self, store: &ParamStore, tokens: &[usize]) -> Result<Encoded> {
        if tokens.is_empty() {
            return Err(Error::contract("cannot encode an empty sentence"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Vocab {
                id: bad,
                size: self.vocab_size,
            });
        }
        let mut tape = Tape::with_params(store);
        let xs = self.embed(&mut tape, &[tokens])?;
        let steps = self.encoder.forward(&mut tape, &xs, None)?;
        let hidden = steps
            .iter()
            .map(|layer| layer.iter().map(|s| tape.value(s.h).to_vec()).collect())
            .collect();
        let distances = steps
            .iter()
            .map(|layer| layer.iter().skip(1).map(|s| tape.value(s.distance)[0]).collect())
            .collect();
        Ok(Encoded { hidden, distances })
    }

    /// Log-probabilities of each next token, for perplexity.
    pub fn next_token_log_probs(&self, store: &ParamStore, tokens: &[usize]) -> Result<Vec<f64>> {
        if tokens.len() < 2 {
            return Ok(Vec::new());
        }
        let mut tape = Tape::with_params(store);
        let xs = self.embed(&mut tape, &[tokens])?;
        let steps = self.encoder.forward(&mut tape, &xs[..tokens.len() - 1], None)?;
        let top = steps.last().expect("at least one layer");
        let mut out = Vec::with_capacity(top.len());
        for (t, s) in top.iter().enumerate() {
            let logits = self.output.forward(&mut tape, s.h)?;
            let lp = tape.log_softmax(logits, 1)?;
            out.push(tape.value(lp)[tokens[t + 1]]);
        }
        Ok(out)
    }
}

/// Concatenates one-element vars into a vector var.
pub(crate) fn stack_scalars(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let flat: Vec<Var> = xs
        .iter()
        .map(|&v| tape.reshape(v, &[1]))
        .collect::<Result<_>>()?;
    tape.concat(&flat, 0)
}
