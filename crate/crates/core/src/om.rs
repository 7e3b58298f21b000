//! Ordered Memory: a stack-like recurrent memory driven by masked
//! stick-breaking attention and a gated recursive composition cell.
//!
//! Slots are indexed `0..N` with slot `N - 1` at the bottom of the stack.
//! Batched state keeps memory as `[N, batch, D]` so a slot is a contiguous
//! `[batch, D]` block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tree::BinaryTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmConfig {
    pub slots: usize,
    pub dim: usize,
    pub input_dim: usize,
    pub attn_hidden: usize,
    pub cell_hidden: usize,
}

impl OmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots < 2 {
            return Err(Error::config(format!("ordered memory needs at least 2 slots, got {}", self.slots)));
        }
        if self.dim == 0 || self.input_dim == 0 || self.attn_hidden == 0 || self.cell_hidden == 0 {
            return Err(Error::config("ordered memory dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OrderedMemory {
    pub config: OmConfig,
    pub proj: Linear,
    /// Shared by the input projection and the cell output.
    pub norm: LayerNorm,
    /// Scores `[M_hat^i; x]`; weights split into memory and query halves.
    pub attn_mem: ParamId,
    pub attn_query: ParamId,
    pub attn_b1: ParamId,
    pub attn_out: Linear,
    /// First cell layer over `[M_hat^{i-1}; M^i]`, split likewise.
    pub cell_prev: ParamId,
    pub cell_mem: ParamId,
    pub cell_b1: ParamId,
    pub cell_out: Linear,
    pub m0: ParamId,
    pub mhat0: ParamId,
}

/// Per-step values recorded when requested.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryFrame {
    /// Attention over slots, `[N]` per batch element: `p[b][i]`.
    pub p: Vec<Vec<f64>>,
    /// Memory after the write, `memory[i][b]`.
    pub memory: Vec<Vec<Vec<f64>>>,
    /// Candidate memory, `candidates[i][b]`.
    pub candidates: Vec<Vec<Vec<f64>>>,
}

/// Tape handles from a batched forward pass.
pub struct OmRun {
    /// Final bottom-slot output, `[batch, D]`.
    pub output: Var,
    /// Attention `[N, batch]` per step.
    pub attention: Vec<Var>,
    pub memory: Vec<Var>,
    pub candidates: Vec<Var>,
}

/// Single-sequence trace: attention per step and final output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmTrace {
    pub p: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl OmTrace {
    pub fn argmax(&self) -> Vec<usize> {
        self.p.iter().map(|p| argmax(p)).collect()
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut k = 0;
    for (j, &v) in xs.iter().enumerate() {
        if v > xs[k] {
            k = j;
        }
    }
    k
}

impl OrderedMemory {
    pub fn new(config: OmConfig, store: &mut ParamStore, rng: &mut Rng, name: &str) -> Result<Self> {
        config.validate()?;
        let (d, n) = (config.dim, config.slots);
        let ah = config.attn_hidden;
        let ch = config.cell_hidden;
        let proj = Linear::new(store, rng, &format!("{name}.proj"), config.input_dim, d, true)?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), d)?;
        let attn_mem = store.add_uniform(format!("{name}.attn.w_mem"), &[d, ah], 2 * d, rng)?;
        let attn_query = store.add_uniform(format!("{name}.attn.w_query"), &[d, ah], 2 * d, rng)?;
        let attn_b1 = store.add_zeros(format!("{name}.attn.b1"), &[ah])?;
        let attn_out = Linear::new(store, rng, &format!("{name}.attn.out"), ah, 1, true)?;
        let cell_prev = store.add_uniform(format!("{name}.cell.w_prev"), &[d, ch], 2 * d, rng)?;
        let cell_mem = store.add_uniform(format!("{name}.cell.w_mem"), &[d, ch], 2 * d, rng)?;
        let cell_b1 = store.add_zeros(format!("{name}.cell.b1"), &[ch])?;
        let cell_out = Linear::new(store, rng, &format!("{name}.cell.out"), ch, 4 * d, true)?;
        let m0 = store.add_uniform(format!("{name}.m0"), &[n, 1, d], d, rng)?;
        let mhat0 = store.add_uniform(format!("{name}.mhat0"), &[n, 1, d], d, rng)?;
        Ok(OrderedMemory {
            config,
            proj,
            norm,
            attn_mem,
            attn_query,
            attn_b1,
            attn_out,
            cell_prev,
            cell_mem,
            cell_b1,
            cell_out,
            m0,
            mhat0,
        })
    }

    /// `LN(W x + b)` on `[batch, input_dim]`.
    pub fn project(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = self.proj.forward(tape, x)?;
        self.norm.forward(tape, y)
    }

    /// Attention logits `[N, batch]` of query `x` (`[batch, D]`) against
    /// candidates `mhat` (`[N, batch, D]`), already divided by `sqrt(N)`.
    pub fn attention_scores(&self, tape: &mut Tape, x: Var, mhat: Var) -> Result<Var> {
        let (n, d) = (self.config.slots, self.config.dim);
        let b = tape.shape(x)[0];
        let ah = self.config.attn_hidden;
        let flat = tape.reshape(mhat, &[n * b, d])?;
        let wm = tape.param(self.attn_mem);
        let hm = tape.matmul(flat, wm)?;
        let hm = tape.reshape(hm, &[n, b, ah])?;
        let wq = tape.param(self.attn_query);
        let hq = tape.matmul(x, wq)?;
        let h = tape.add(hm, hq)?;
        let b1 = tape.param(self.attn_b1);
        let h = tape.add(h, b1)?;
        let h = tape.tanh(h)?;
        let h = tape.reshape(h, &[n * b, ah])?;
        let s = self.attn_out.forward(tape, h)?;
        let s = tape.reshape(s, &[n, b])?;
        tape.scale(s, 1.0 / (n as f64).sqrt())
    }

    /// Stick-breaking mask from the previous cumulative attention `[N, batch]`:
    /// slot `i` gets `cp[i + 1]`, the bottom slot gets 1.
    pub fn attention_mask(&self, tape: &mut Tape, cp_prev: Var) -> Result<Var> {
        let n = self.config.slots;
        let b = tape.shape(cp_prev)[1];
        let shifted = tape.slice(cp_prev, 0, 1, n - 1)?;
        let one = tape.constant(Tensor::ones(&[1, b]))?;
        tape.concat(&[shifted, one], 0)
    }

    /// `[M_hat^{i-1}; M^i]` through the cell, given `m W_mem` precomputed.
    fn cell_with(&self, tape: &mut Tape, m: Var, prev: Var, m_proj: Var) -> Result<Var> {
        let d = self.config.dim;
        let wp = tape.param(self.cell_prev);
        let hp = tape.matmul(prev, wp)?;
        let h = tape.add(hp, m_proj)?;
        let b1 = tape.param(self.cell_b1);
        let h = tape.add(h, b1)?;
        let h = tape.relu(h)?;
        let g = self.cell_out.forward(tape, h)?;
        let vg = tape.slice(g, 1, 0, d)?;
        let vg = tape.sigmoid(vg)?;
        let hg = tape.slice(g, 1, d, d)?;
        let hg = tape.sigmoid(hg)?;
        let cg = tape.slice(g, 1, 2 * d, d)?;
        let cg = tape.sigmoid(cg)?;
        let u = tape.slice(g, 1, 3 * d, d)?;
        let a = tape.mul(vg, prev)?;
        let bb = tape.mul(hg, m)?;
        let c = tape.mul(cg, u)?;
        let s = tape.add(a, bb)?;
        let s = tape.add(s, c)?;
        self.norm.forward(tape, s)
    }

    /// Gated recursive cell on `[batch, D]` memory `m` and lower candidate
    /// `prev`.
    pub fn cell(&self, tape: &mut Tape, m: Var, prev: Var) -> Result<Var> {
        let wm = tape.param(self.cell_mem);
        let m_proj = tape.matmul(m, wm)?;
        self.cell_with(tape, m, prev, m_proj)
    }

    /// Runs the memory over `inputs` (one `[batch, input_dim]` var per
    /// step). Sequence `b` is active for its first `lengths[b]` steps and
    /// frozen afterwards. `forced[t][b]` replaces the attention with a
    /// one-hot distribution on that slot.
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: &[Var],
        lengths: &[usize],
        forced: Option<&[Vec<usize>]>,
    ) -> Result<OmRun> {
        let (n, d) = (self.config.slots, self.config.dim);
        let steps = inputs.len();
        let b = lengths.len();
        if steps == 0 || b == 0 {
            return Err(Error::contract("ordered memory over an empty batch"));
        }
        if lengths.iter().any(|&l| l == 0 || l > steps) {
            return Err(Error::contract("sequence lengths must be in 1..=steps"));
        }
        if let Some(f) = forced {
            if f.len() < steps || f.iter().take(steps).any(|row| row.len() != b || row.iter().any(|&s| s >= n)) {
                return Err(Error::contract("forced attention must give a valid slot per step and sequence"));
            }
        }
        let m0 = tape.param(self.m0);
        let zeros = tape.constant(Tensor::zeros(&[n, b, d]))?;
        let mut mem = tape.add(zeros, m0)?;
        let mhat0 = tape.param(self.mhat0);
        let mut mhat = tape.add(zeros, mhat0)?;
        let mut cp = tape.constant(Tensor::zeros(&[n, b]))?;
        let mut run = OmRun {
            output: mem,
            attention: Vec::with_capacity(steps),
            memory: Vec::with_capacity(steps),
            candidates: Vec::with_capacity(steps),
        };
        let wm = tape.param(self.cell_mem);
        for t in 0..steps {
            let x = self.project(tape, inputs[t])?;
            let p = match forced {
                Some(f) => {
                    let mut onehot = vec![0.0; n * b];
                    for (bi, &slot) in f[t].iter().enumerate() {
                        onehot[slot * b + bi] = 1.0;
                    }
                    tape.constant(Tensor::new(vec![n, b], onehot)?)?
                }
                None => {
                    let scores = self.attention_scores(tape, x, mhat)?;
                    let mask = self.attention_mask(tape, cp)?;
                    tape.masked_softmax(scores, mask, 0)?
                }
            };
            let new_cp = tape.cumsum(p, 0, false)?;
            let rcp = tape.cumsum(p, 0, true)?;
            check_monotone(tape.value(new_cp), n, b);
            let rcp3 = tape.reshape(rcp, &[n, b, 1])?;
            let new_mem = tape.blend(mem, mhat, rcp3)?;

            let flat = tape.reshape(new_mem, &[n * b, d])?;
            let proj = tape.matmul(flat, wm)?;
            let ch = self.config.cell_hidden;
            let proj = tape.reshape(proj, &[n, b * ch])?;
            let mut prev = x;
            let mut cands = Vec::with_capacity(n);
            for i in 0..n {
                let mi = tape.slice(new_mem, 0, i, 1)?;
                let mi = tape.reshape(mi, &[b, d])?;
                let pi = tape.slice(proj, 0, i, 1)?;
                let pi = tape.reshape(pi, &[b, ch])?;
                let o = self.cell_with(tape, mi, prev, pi)?;
                let cpi = tape.slice(new_cp, 0, i, 1)?;
                let cpi = tape.reshape(cpi, &[b, 1])?;
                let cand = tape.blend(x, o, cpi)?;
                let cand = tape.reshape(cand, &[1, b, d])?;
                cands.push(cand);
                prev = tape.reshape(cand, &[b, d])?;
            }
            let mut new_mhat = tape.concat(&cands, 0)?;
            let mut new_mem = new_mem;
            let mut new_cp = new_cp;

            let frozen: Vec<f64> = lengths.iter().map(|&l| if t < l { 0.0 } else { 1.0 }).collect();
            if frozen.iter().any(|&f| f > 0.0) {
                let w3 = tape.constant(Tensor::new(vec![1, b, 1], frozen.clone())?)?;
                let w2 = tape.constant(Tensor::new(vec![1, b], frozen)?)?;
                new_mem = tape.blend(new_mem, mem, w3)?;
                new_mhat = tape.blend(new_mhat, mhat, w3)?;
                new_cp = tape.blend(new_cp, cp, w2)?;
            }
            mem = new_mem;
            mhat = new_mhat;
            cp = new_cp;
            run.attention.push(p);
            run.memory.push(mem);
            run.candidates.push(mhat);
        }
        let last = tape.slice(mhat, 0, n - 1, 1)?;
        run.output = tape.reshape(last, &[b, d])?;
        Ok(run)
    }

    /// Reads per-step values of a run back from the tape.
    pub fn frames(&self, tape: &Tape, run: &OmRun) -> Vec<MemoryFrame> {
        let n = self.config.slots;
        let split = |v: &[f64], b: usize, d: usize| -> Vec<Vec<Vec<f64>>> {
            (0..n)
                .map(|i| (0..b).map(|bi| v[(i * b + bi) * d..(i * b + bi + 1) * d].to_vec()).collect())
                .collect()
        };
        run.attention
            .iter()
            .zip(&run.memory)
            .zip(&run.candidates)
            .map(|((&p, &m), &mh)| {
                let b = tape.shape(p)[1];
                let pv = tape.value(p);
                MemoryFrame {
                    p: (0..b).map(|bi| (0..n).map(|i| pv[i * b + bi]).collect()).collect(),
                    memory: split(tape.value(m), b, self.config.dim),
                    candidates: split(tape.value(mh), b, self.config.dim),
                }
            })
            .collect()
    }
}

fn check_monotone(cp: &[f64], n: usize, b: usize) {
    for bi in 0..b {
        for i in 1..n {
            let drop = cp[(i - 1) * b + bi] - cp[i * b + bi];
            if drop > 1e-6 {
                log::warn!("cumulative attention decreases by {drop:.3e} at slot {i}");
            }
        }
    }
}

/// Ordered memory over token embeddings.
#[derive(Clone, Debug)]
pub struct OmEncoder {
    pub vocab_size: usize,
    pub embedding: ParamId,
    pub memory: OrderedMemory,
}

impl OmEncoder {
    pub fn new(vocab_size: usize, config: OmConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::config("vocabulary is empty"));
        }
        let embedding = store.add_uniform("om.embedding", &[vocab_size, config.input_dim], 1, rng)?;
        let memory = OrderedMemory::new(config, store, rng, "om")?;
        Ok(OmEncoder {
            vocab_size,
            embedding,
            memory,
        })
    }

    /// Embeds and runs a batch of sequences of possibly different lengths.
    pub fn run(&self, tape: &mut Tape, batch: &[&[usize]], forced: Option<&[Vec<usize>]>) -> Result<OmRun> {
        let lengths: Vec<usize> = batch.iter().map(|s| s.len()).collect();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        if steps == 0 || lengths.contains(&0) {
            return Err(Error::contract("cannot encode an empty sequence"));
        }
        for s in batch {
            if let Some(&bad) = s.iter().find(|&&t| t >= self.vocab_size) {
                return Err(Error::Vocab {
                    id: bad,
                    size: self.vocab_size,
                });
            }
        }
        let table = tape.param(self.embedding);
        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            // finished sequences repeat their last token; their state is frozen
            let ids: Vec<usize> = batch.iter().map(|s| s[t.min(s.len() - 1)]).collect();
            inputs.push(tape.embedding(table, &ids)?);
        }
        self.memory.forward(tape, &inputs, &lengths, forced)
    }

    /// Attention trace and final output for one sequence.
    pub fn trace(&self, store: &ParamStore, tokens: &[usize]) -> Result<OmTrace> {
        let mut tape = Tape::with_params(store);
        let run = self.run(&mut tape, &[tokens], None)?;
        Ok(OmTrace {
            p: run.attention.iter().map(|&p| tape.value(p).to_vec()).collect(),
            output: tape.value(run.output).to_vec(),
        })
    }
}

/// Greedy shift-reduce reading of attention distributions: the argmax slot
/// of each step decides how many reduces precede the next shift.
pub fn om_parse(ps: &[Vec<f64>]) -> Result<BinaryTree> {
    if ps.is_empty() {
        return Err(Error::contract("cannot parse an empty trace"));
    }
    let ys: Vec<usize> = ps.iter().map(|p| argmax(p)).collect();
    Ok(om_parse_slots(&ys))
}

/// [`om_parse`] from the argmax slots directly.
pub fn om_parse_slots(ys: &[usize]) -> BinaryTree {
    let mut stack = vec![BinaryTree::Leaf(0)];
    let mut h = ys[0] as i64 - 1;
    for (i, &y) in ys.iter().enumerate().skip(1) {
        let d = y as i64 - h;
        for _ in 0..d.max(0) {
            if stack.len() < 2 {
                break;
            }
            reduce(&mut stack);
        }
        stack.push(BinaryTree::Leaf(i));
        h = y as i64 - 1;
    }
    while stack.len() > 1 {
        reduce(&mut stack);
    }
    stack.pop().expect("one tree remains")
}

fn reduce(stack: &mut Vec<BinaryTree>) {
    let e1 = stack.pop().expect("two elements");
    let e2 = stack.pop().expect("two elements");
    stack.push(BinaryTree::node(e2, e1));
}

/// MLP over `(h1, h2, h1 * h2, |h1 - h2|)` producing relation logits.
#[derive(Clone, Debug)]
pub struct PairHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl PairHead {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, dim: usize, classes: usize) -> Result<Self> {
        Ok(PairHead {
            hidden: Linear::new(store, rng, "pair.hidden", 4 * dim, 2 * dim, true)?,
            out: Linear::new(store, rng, "pair.out", 2 * dim, classes, true)?,
        })
    }

    pub fn features(tape: &mut Tape, h1: Var, h2: Var) -> Result<Var> {
        let prod = tape.mul(h1, h2)?;
        let diff = tape.sub(h1, h2)?;
        let diff = tape.abs(diff)?;
        tape.concat(&[h1, h2, prod, diff], 1)
    }

    pub fn forward(&self, tape: &mut Tape, h1: Var, h2: Var) -> Result<Var> {
        let f = Self::features(tape, h1, h2)?;
        let h = self.hidden.forward(tape, f)?;
        let h = tape.relu(h)?;
        self.out.forward(tape, h)
    }
}

/// One-hidden-layer MLP classifier on a single vector.
#[derive(Clone, Debug)]
pub struct MlpHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl MlpHead {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, dim: usize, classes: usize) -> Result<Self> {
        Ok(MlpHead {
            hidden: Linear::new(store, rng, &format!("{name}.hidden"), dim, 2 * dim, true)?,
            out: Linear::new(store, rng, &format!("{name}.out"), 2 * dim, classes, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, h)?;
        let h = tape.relu(h)?;
        self.out.forward(tape, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_small_traces() {
        assert_eq!(om_parse_slots(&[3, 1]).render_indices(), "( w0 w1 )");
        assert_eq!(om_parse_slots(&[3, 3, 3]).render_indices(), "( ( w0 w1 ) w2 )");
        assert_eq!(om_parse_slots(&[3, 3, 2]).render_indices(), "( w0 ( w1 w2 ) )");
        assert_eq!(om_parse_slots(&[3]), BinaryTree::Leaf(0));
    }
}
