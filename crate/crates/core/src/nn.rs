//! Small layers shared by the models.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// `y = x W + b` on row-major `[batch, in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add_uniform(format!("{name}.w"), &[input, output], input, rng)?;
        let b = if bias {
            Some(store.add_zeros(format!("{name}.b"), &[output])?)
        } else {
            None
        };
        Ok(Linear { w, b, input, output })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Layer normalization followed by a learned per-feature scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add_ones(format!("{name}.gamma"), &[dim])?,
            beta: store.add_zeros(format!("{name}.beta"), &[dim])?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x, LN_EPS)?;
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        let y = tape.mul(n, g)?;
        tape.add(y, b)
    }
}

/// Plain LSTM cell; gate blocks in the order input, forget, output, cell.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(LstmCell {
            w: store.add_uniform(format!("{name}.w"), &[input, 4 * hidden], input, rng)?,
            u: store.add_uniform(format!("{name}.u"), &[hidden, 4 * hidden], hidden, rng)?,
            b: store.add_zeros(format!("{name}.b"), &[4 * hidden])?,
            hidden,
        })
    }

    /// One step on `[batch, input]`; returns `(h, c)`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let d = self.hidden;
        let (w, u, b) = (tape.param(self.w), tape.param(self.u), tape.param(self.b));
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let pre = tape.add(xw, hu)?;
        let pre = tape.add(pre, b)?;
        let i = tape.slice(pre, 1, 0, d)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice(pre, 1, d, d)?;
        let f = tape.sigmoid(f)?;
        let o = tape.slice(pre, 1, 2 * d, d)?;
        let o = tape.sigmoid(o)?;
        let g = tape.slice(pre, 1, 3 * d, d)?;
        let g = tape.tanh(g)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }
}
