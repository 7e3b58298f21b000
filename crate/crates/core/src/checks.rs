//! End-to-end gradient checks of the three models at tiny sizes.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::om::{MlpHead, OmConfig, OmEncoder, PairHead};
use crate::onlstm::{OnLstmConfig, OnLstmLm};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::udgn::{Activation, Competition, DgnConfig, ForwardOptions, ParserConfig, PositionMode, Udgn, UdgnConfig};

pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckModel {
    Onlstm,
    Om,
    OmPair,
    Udgn,
}

impl CheckModel {
    pub const ALL: [CheckModel; 4] = [CheckModel::Onlstm, CheckModel::Om, CheckModel::OmPair, CheckModel::Udgn];

    pub fn name(self) -> &'static str {
        match self {
            CheckModel::Onlstm => "onlstm",
            CheckModel::Om => "om",
            CheckModel::OmPair => "om-pair",
            CheckModel::Udgn => "udgn",
        }
    }
}

impl FromStr for CheckModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CheckModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown model {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TinyDims {
    pub dim: usize,
    pub chunk: usize,
    pub slots: usize,
    pub channels: usize,
    pub layers: usize,
    pub len: usize,
    pub vocab: usize,
}

impl Default for TinyDims {
    fn default() -> Self {
        TinyDims {
            dim: 8,
            chunk: 2,
            slots: 3,
            channels: 2,
            layers: 2,
            len: 4,
            vocab: 7,
        }
    }
}

fn tokens(rng: &mut Rng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.below(vocab)).collect()
}

/// Moves every parameter off its initial value so zero biases and uniform
/// softmaxes do not hide errors.
fn jitter(store: &mut ParamStore, rng: &mut Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.get_mut(id).data_mut() {
            *x += 0.1 * rng.range_f64(-1.0, 1.0);
        }
    }
}

pub fn check_model(model: CheckModel, dims: TinyDims, seed: u64) -> Result<GradCheckReport> {
    if dims.len < 2 || dims.vocab < 2 {
        return Err(Error::config("gradient check needs len >= 2 and vocab >= 2"));
    }
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    match model {
        CheckModel::Onlstm => {
            let cfg = OnLstmConfig {
                input_dim: dims.dim,
                hidden_dim: dims.dim,
                chunk: dims.chunk,
                num_layers: dims.layers,
                dropout: 0.0,
            };
            let lm = OnLstmLm::new(dims.vocab, cfg, &mut store, &mut rng)?;
            jitter(&mut store, &mut rng);
            let batch = [tokens(&mut rng, dims.len, dims.vocab), tokens(&mut rng, dims.len, dims.vocab)];
            grad_check(&store, seed, |tape, _| {
                let refs: Vec<&[usize]> = batch.iter().map(Vec::as_slice).collect();
                lm.loss(tape, &refs, None)
            })
        }
        CheckModel::Om | CheckModel::OmPair => {
            let cfg = OmConfig {
                slots: dims.slots,
                dim: dims.dim,
                input_dim: dims.dim,
                attn_hidden: dims.dim,
                cell_hidden: dims.dim,
            };
            let enc = OmEncoder::new(dims.vocab, cfg, &mut store, &mut rng)?;
            let a = tokens(&mut rng, dims.len, dims.vocab);
            let b = tokens(&mut rng, dims.len - 1, dims.vocab);
            if model == CheckModel::Om {
                let head = MlpHead::new(&mut store, &mut rng, "cls", dims.dim, 3)?;
                jitter(&mut store, &mut rng);
                grad_check(&store, seed, |tape, _| {
                    let run = enc.run(tape, &[&a, &b], None)?;
                    let logits = head.forward(tape, run.output)?;
                    tape.cross_entropy(logits, &[0, 2])
                })
            } else {
                let head = PairHead::new(&mut store, &mut rng, dims.dim, 7)?;
                jitter(&mut store, &mut rng);
                grad_check(&store, seed, |tape, _| {
                    let run = enc.run(tape, &[&a, &b], None)?;
                    let h1 = tape.slice(run.output, 0, 0, 1)?;
                    let h2 = tape.slice(run.output, 0, 1, 1)?;
                    let logits = head.forward(tape, h1, h2)?;
                    tape.cross_entropy(logits, &[4])
                })
            }
        }
        CheckModel::Udgn => {
            let cfg = UdgnConfig {
                parser: ParserConfig {
                    embed_dim: dims.dim,
                    hidden_dim: dims.dim,
                    num_tags: 3,
                    lstm_layers: 1,
                },
                dgn: DgnConfig {
                    layers: dims.layers,
                    channels: dims.channels,
                    hidden_dim: dims.dim,
                    activation: Activation::Tanh,
                    gates: true,
                    competition: if dims.channels == 1 { Competition::Single } else { Competition::Softmax },
                    position: PositionMode::RelativeBias,
                    max_len: dims.len,
                },
            };
            let u = Udgn::new(cfg, dims.vocab, dims.vocab - 1, &mut store, &mut rng)?;
            jitter(&mut store, &mut rng);
            let targets = tokens(&mut rng, dims.len, dims.vocab);
            let mut inputs = targets.clone();
            let positions = vec![0, dims.len - 1];
            for &p in &positions {
                inputs[p] = dims.vocab - 2;
            }
            grad_check(&store, seed, |tape, _| {
                u.mlm_loss(tape, &inputs, &targets, &positions, ForwardOptions::default())?
                    .ok_or_else(|| Error::contract("no masked positions"))
            })
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Magnitude in [0.2, 1] with a random sign, away from kinks at 0.
    Signed,
    Positive,
    /// Strictly inside (0, 1).
    Unit,
}

type OpFn = fn(&mut Tape, &[Var]) -> Result<Var>;

struct Case {
    name: &'static str,
    inputs: Vec<(Vec<usize>, Init)>,
    f: OpFn,
}

fn case(name: &'static str, inputs: &[(&[usize], Init)], f: OpFn) -> Case {
    Case {
        name,
        inputs: inputs.iter().map(|(s, i)| (s.to_vec(), *i)).collect(),
        f,
    }
}

fn cases() -> Vec<Case> {
    use Init::*;
    vec![
        case("add", &[(&[2, 3], Signed), (&[3], Signed)], |t, v| t.add(v[0], v[1])),
        case("sub", &[(&[2, 3], Signed), (&[2, 1], Signed)], |t, v| t.sub(v[0], v[1])),
        case("mul", &[(&[2, 3, 4], Signed), (&[3, 1], Signed)], |t, v| t.mul(v[0], v[1])),
        case("div", &[(&[2, 3], Signed), (&[3], Positive)], |t, v| t.div(v[0], v[1])),
        case("blend", &[(&[2, 3], Signed), (&[2, 3], Signed), (&[2, 1], Unit)], |t, v| {
            t.blend(v[0], v[1], v[2])
        }),
        case("scale", &[(&[4], Signed)], |t, v| t.scale(v[0], -1.7)),
        case("add_scalar", &[(&[4], Signed)], |t, v| t.add_scalar(v[0], 0.3)),
        case("one_minus", &[(&[4], Unit)], |t, v| t.one_minus(v[0])),
        case("sigmoid", &[(&[5], Signed)], |t, v| t.sigmoid(v[0])),
        case("tanh", &[(&[5], Signed)], |t, v| t.tanh(v[0])),
        case("relu", &[(&[6], Signed)], |t, v| t.relu(v[0])),
        case("elu", &[(&[6], Signed)], |t, v| t.elu(v[0])),
        case("abs", &[(&[6], Signed)], |t, v| t.abs(v[0])),
        case("exp", &[(&[4], Signed)], |t, v| t.exp(v[0])),
        case("log", &[(&[4], Positive)], |t, v| t.log(v[0])),
        case("matmul", &[(&[3, 4], Signed), (&[4, 2], Signed)], |t, v| t.matmul(v[0], v[1])),
        case("matmul_nt", &[(&[3, 4], Signed), (&[2, 4], Signed)], |t, v| t.matmul_nt(v[0], v[1])),
        case("transpose", &[(&[2, 3], Signed)], |t, v| t.transpose(v[0])),
        case("reshape", &[(&[2, 6], Signed)], |t, v| t.reshape(v[0], &[3, 4])),
        case("concat0", &[(&[2, 3], Signed), (&[1, 3], Signed)], |t, v| t.concat(&[v[0], v[1]], 0)),
        case("concat1", &[(&[2, 3], Signed), (&[2, 2], Signed)], |t, v| t.concat(&[v[0], v[1]], 1)),
        case("slice", &[(&[3, 4, 2], Signed)], |t, v| t.slice(v[0], 1, 1, 2)),
        case("repeat_interleave", &[(&[2, 3], Signed)], |t, v| t.repeat_interleave(v[0], 2)),
        case("softmax0", &[(&[3, 4], Signed)], |t, v| t.softmax(v[0], 0)),
        case("softmax1", &[(&[3, 4], Signed)], |t, v| t.softmax(v[0], 1)),
        case("log_softmax", &[(&[3, 4], Signed)], |t, v| t.log_softmax(v[0], 1)),
        case("masked_softmax", &[(&[3, 4], Signed), (&[3, 4], Unit)], |t, v| {
            t.masked_softmax(v[0], v[1], 1)
        }),
        case("cumsum", &[(&[3, 4], Signed)], |t, v| t.cumsum(v[0], 0, false)),
        case("cumsum_reverse", &[(&[3, 4], Signed)], |t, v| t.cumsum(v[0], 1, true)),
        case("sum", &[(&[2, 3, 4], Signed)], |t, v| t.sum(v[0], 1)),
        case("mean", &[(&[2, 3, 4], Signed)], |t, v| t.mean(v[0], 2)),
        case("sum_all", &[(&[2, 3], Signed)], |t, v| t.sum_all(v[0])),
        case("mean_all", &[(&[2, 3], Signed)], |t, v| t.mean_all(v[0])),
        case("layer_norm", &[(&[3, 5], Signed)], |t, v| t.layer_norm(v[0], 1e-5)),
        case("embedding", &[(&[5, 3], Signed)], |t, v| t.embedding(v[0], &[4, 0, 4, 2])),
        case("pick", &[(&[3, 4], Signed)], |t, v| t.pick(v[0], &[3, 0, 2])),
        case("cross_entropy", &[(&[3, 4], Signed)], |t, v| t.cross_entropy(v[0], &[1, 3, 0])),
    ]
}

fn init_tensor(shape: &[usize], init: Init, rng: &mut Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| match init {
            Init::Signed => {
                let m = rng.range_f64(0.2, 1.0);
                if rng.bernoulli(0.5) {
                    m
                } else {
                    -m
                }
            }
            Init::Positive => rng.range_f64(0.5, 1.5),
            Init::Unit => rng.range_f64(0.1, 0.9),
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Gradient check of every tape primitive. Each output is contracted with
/// fixed random weights so every output entry reaches the loss.
pub fn check_primitives(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::new();
    for (k, c) in cases().into_iter().enumerate() {
        let mut rng = Rng::new(seed).split(k as u64);
        let mut store = ParamStore::new();
        for (j, (shape, init)) in c.inputs.iter().enumerate() {
            store.add(format!("{}.{j}", c.name), init_tensor(shape, *init, &mut rng)?)?;
        }
        let ids: Vec<_> = store.ids().collect();
        let f = c.f;
        let report = grad_check(&store, seed, |tape, rng| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
            let y = f(tape, &vars)?;
            let w = init_tensor(tape.shape(y), Init::Signed, rng)?;
            let w = tape.constant(w)?;
            let yw = tape.mul(y, w)?;
            tape.sum_all(yw)
        })?;
        out.push((c.name, report));
    }
    Ok(out)
}
