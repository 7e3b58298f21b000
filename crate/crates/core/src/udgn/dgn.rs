//! Dependency graph network layers: gated channels that compete for each
//! token pair, weighted by the dependency mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Elu,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            _ => Err(Error::config(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Competition {
    /// Softmax across channels.
    Softmax,
    /// Independent sigmoid per channel.
    Sigmoid,
    /// One channel whose weight is the mask itself.
    Single,
}

impl std::str::FromStr for Competition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Competition::Softmax),
            "sigmoid" => Ok(Competition::Sigmoid),
            "single" | "single-channel" => Ok(Competition::Single),
            _ => Err(Error::config(format!("unknown competition mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionMode {
    RelativeBias,
    Absolute,
}

impl std::str::FromStr for PositionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" | "relative-bias" => Ok(PositionMode::RelativeBias),
            "absolute" => Ok(PositionMode::Absolute),
            _ => Err(Error::config(format!("unknown position mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgnConfig {
    pub layers: usize,
    pub channels: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub gates: bool,
    pub competition: Competition,
    pub position: PositionMode,
    /// Longest sentence for absolute position embeddings.
    pub max_len: usize,
}

impl DgnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 || self.hidden_dim == 0 {
            return Err(Error::config("DGN dimensions must be positive"));
        }
        if !self.hidden_dim.is_multiple_of(self.channels) {
            return Err(Error::config(format!(
                "hidden_dim {} is not a multiple of channels {}",
                self.hidden_dim, self.channels
            )));
        }
        if self.competition == Competition::Single && self.channels != 1 {
            return Err(Error::config("single-channel mode needs channels = 1"));
        }
        Ok(())
    }

    pub fn channel_dim(&self) -> usize {
        self.hidden_dim / self.channels
    }
}

#[derive(Clone, Debug)]
pub struct DgnLayer {
    /// `[D, 4D]`: query, key, value and gate blocks.
    pub proj: Linear,
    pub out: Linear,
    /// Per-channel biases for `i > j` and `i < j`.
    pub bias_left: ParamId,
    pub bias_right: ParamId,
}

/// Channel weights of one layer: `a_hat[k]` and `a[k]`, each `[T, T]`.
#[derive(Clone, Debug)]
pub struct LayerAttention {
    pub a_hat: Vec<Var>,
    pub a: Vec<Var>,
}

impl DgnLayer {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, config: &DgnConfig) -> Result<Self> {
        let d = config.hidden_dim;
        Ok(DgnLayer {
            proj: Linear::new(store, rng, &format!("{name}.proj"), d, 4 * d, true)?,
            out: Linear::new(store, rng, &format!("{name}.out"), d, d, true)?,
            bias_left: store.add_zeros(format!("{name}.bias_left"), &[config.channels])?,
            bias_right: store.add_zeros(format!("{name}.bias_right"), &[config.channels])?,
        })
    }

    /// `h + W_o [o_1; ...; o_K] + b_o` for `h: [T, D]` and mask `m: [T, T]`.
    pub fn forward(&self, tape: &mut Tape, config: &DgnConfig, h: Var, m: Var) -> Result<(Var, LayerAttention)> {
        let t = tape.shape(h)[0];
        let d = config.hidden_dim;
        let dc = config.channel_dim();
        let nc = config.channels;
        let proj = self.proj.forward(tape, h)?;
        let block = |tape: &mut Tape, b: usize, k: usize| tape.slice(proj, 1, b * d + k * dc, dc);

        let (lower, upper) = triangles(t);
        let lower = tape.constant(lower)?;
        let upper = tape.constant(upper)?;
        let bl = tape.param(self.bias_left);
        let br = tape.param(self.bias_right);

        let mut logits = Vec::with_capacity(nc);
        for k in 0..nc {
            let q = block(tape, 0, k)?;
            let key = block(tape, 1, k)?;
            let e = tape.matmul_nt(q, key)?;
            let mut e = tape.scale(e, 1.0 / (d as f64).sqrt())?;
            if config.position == PositionMode::RelativeBias {
                let blk = tape.slice(bl, 0, k, 1)?;
                let brk = tape.slice(br, 0, k, 1)?;
                let l = tape.mul(lower, blk)?;
                let u = tape.mul(upper, brk)?;
                e = tape.add(e, l)?;
                e = tape.add(e, u)?;
            }
            logits.push(e);
        }

        let a_hat: Vec<Var> = match config.competition {
            Competition::Softmax => {
                let cols: Vec<Var> = logits
                    .iter()
                    .map(|&e| tape.reshape(e, &[t, t, 1]))
                    .collect::<Result<_>>()?;
                let stacked = tape.concat(&cols, 2)?;
                let sm = tape.softmax(stacked, 2)?;
                (0..nc)
                    .map(|k| {
                        let s = tape.slice(sm, 2, k, 1)?;
                        tape.reshape(s, &[t, t])
                    })
                    .collect::<Result<_>>()?
            }
            Competition::Sigmoid => logits.iter().map(|&e| tape.sigmoid(e)).collect::<Result<_>>()?,
            Competition::Single => vec![tape.constant(Tensor::ones(&[t, t]))?],
        };

        let mut outs = Vec::with_capacity(nc);
        let mut a = Vec::with_capacity(nc);
        for (k, &ah) in a_hat.iter().enumerate() {
            let ak = tape.mul(ah, m)?;
            let v = block(tape, 2, k)?;
            let v = match config.activation {
                Activation::Identity => v,
                Activation::Tanh => tape.tanh(v)?,
                Activation::Relu => tape.relu(v)?,
                Activation::Elu => tape.elu(v)?,
            };
            let mut o = tape.matmul(ak, v)?;
            if config.gates {
                let g = block(tape, 3, k)?;
                let g = tape.sigmoid(g)?;
                o = tape.mul(o, g)?;
            }
            outs.push(o);
            a.push(ak);
        }
        let cat = tape.concat(&outs, 1)?;
        let delta = self.out.forward(tape, cat)?;
        let h = tape.add(h, delta)?;
        Ok((h, LayerAttention { a_hat, a }))
    }
}

/// Strictly lower (`i > j`) and strictly upper (`i < j`) indicator matrices.
pub fn triangles(t: usize) -> (Tensor, Tensor) {
    let lower = (0..t * t).map(|k| if k / t > k % t { 1.0 } else { 0.0 }).collect();
    let upper = (0..t * t).map(|k| if k / t < k % t { 1.0 } else { 0.0 }).collect();
    (
        Tensor::new(vec![t, t], lower).expect("square"),
        Tensor::new(vec![t, t], upper).expect("square"),
    )
}
