//! Task models behind one interface: construction from a config,
//! batch losses, predictions and checkpointing.

use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::om::{om_parse, MlpHead, OmConfig, OmEncoder, PairHead};
use crate::onlstm::{stack_scalars, OnLstm, OnLstmConfig, OnLstmLm, StepVars};
use crate::optim::Adam;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tasks::{mask_tokens, Vocab};
use crate::tree::{distance_to_tree, BinaryTree};
use crate::udgn::{DepParse, DgnConfig, ForwardOptions, ParserConfig, Udgn, UdgnConfig};

use super::config::{ModelKind, Task, TrainConfig};
use super::data::Data;

pub const LISTOPS_CLASSES: usize = 10;
pub const LOGIC_CLASSES: usize = 7;

const FORMAT: &str = "synbias-model";
const ADAM_M: &str = "__adam_m/";
const ADAM_V: &str = "__adam_v/";

#[derive(Clone, Debug)]
pub enum Net {
    OmSeq {
        encoder: OmEncoder,
        head: MlpHead,
    },
    OmPair {
        encoder: OmEncoder,
        head: PairHead,
    },
    OnlstmSeq {
        embedding: ParamId,
        encoder: OnLstm,
        head: MlpHead,
    },
    OnlstmLm(OnLstmLm),
    Udgn(Udgn),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub net: Net,
    /// Add-one unigram log-probabilities of the training corpus.
    pub unigram: Option<Vec<f64>>,
}

/// Predictions for one batch: labels and, for sequence models, the trees
/// read off the model state.
pub struct Predictions {
    pub labels: Vec<usize>,
    pub trees: Vec<Option<BinaryTree>>,
}

pub fn udgn_config(cfg: &TrainConfig) -> UdgnConfig {
    UdgnConfig {
        parser: ParserConfig {
            embed_dim: cfg.dim,
            hidden_dim: cfg.parser_hidden,
            num_tags: cfg.tags,
            lstm_layers: cfg.parser_layers,
        },
        dgn: DgnConfig {
            layers: cfg.dgn_layers,
            channels: cfg.channels,
            hidden_dim: cfg.dim,
            activation: cfg.activation,
            gates: cfg.gates,
            competition: cfg.competition,
            position: cfg.position,
            max_len: cfg.max_len,
        },
    }
}

pub fn om_config(cfg: &TrainConfig) -> OmConfig {
    OmConfig {
        slots: cfg.slots,
        dim: cfg.dim,
        input_dim: cfg.dim,
        attn_hidden: cfg.dim,
        cell_hidden: cfg.cell_hidden,
    }
}

pub fn onlstm_config(cfg: &TrainConfig) -> OnLstmConfig {
    OnLstmConfig {
        input_dim: cfg.dim,
        hidden_dim: cfg.dim,
        chunk: cfg.chunk,
        num_layers: cfg.layers,
        dropout: cfg.dropout,
    }
}

fn column(tape: &Tape, v: Var, b: usize, rows: usize, cols: usize) -> Vec<f64> {
    let data = tape.value(v);
    (0..rows).map(|i| data[i * cols + b]).collect()
}

fn argmax_rows(tape: &Tape, logits: Var) -> Vec<usize> {
    let c = tape.shape(logits)[1];
    tape.value(logits)
        .chunks(c)
        .map(crate::om::argmax)
        .collect()
}

/// Add-one unigram log-probabilities over `vocab`.
pub fn unigram_log_probs(data: &Data, vocab_size: usize) -> Option<Vec<f64>> {
    let Data::Corpus(items) = data else { return None };
    let mut counts = vec![1.0; vocab_size];
    for s in items {
        for &id in &s.ids {
            counts[id] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    Some(counts.iter().map(|c| (c / total).ln()).collect())
}

impl Model {
    pub fn new(config: TrainConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(config.seed).split(0x1417);
        let v = vocab.len();
        let net = match (config.task, config.model) {
            (Task::Listops, ModelKind::Om) => {
                let encoder = OmEncoder::new(v, om_config(&config), &mut store, &mut rng)?;
                let head = MlpHead::new(&mut store, &mut rng, "cls", config.dim, LISTOPS_CLASSES)?;
                Net::OmSeq { encoder, head }
            }
            (Task::Logic, ModelKind::Om) => {
                let encoder = OmEncoder::new(v, om_config(&config), &mut store, &mut rng)?;
                let head = PairHead::new(&mut store, &mut rng, config.dim, LOGIC_CLASSES)?;
                Net::OmPair { encoder, head }
            }
            (Task::Listops, ModelKind::Onlstm) => {
                let oc = onlstm_config(&config);
                oc.validate()?;
                let embedding = store.add_uniform("onlstm.embedding", &[v, config.dim], 1, &mut rng)?;
                let encoder = OnLstm::new(oc, &mut store, &mut rng, "onlstm")?;
                let head = MlpHead::new(&mut store, &mut rng, "cls", config.dim, LISTOPS_CLASSES)?;
                Net::OnlstmSeq {
                    embedding,
                    encoder,
                    head,
                }
            }
            (Task::Toy, ModelKind::Onlstm) => {
                Net::OnlstmLm(OnLstmLm::new(v, onlstm_config(&config), &mut store, &mut rng)?)
            }
            (Task::Toy, ModelKind::Udgn) => {
                Net::Udgn(Udgn::new(udgn_config(&config), v, vocab.unk(), &mut store, &mut rng)?)
            }
            _ => return Err(Error::config("unsupported task/model combination")),
        };
        Ok(Model {
            config,
            vocab,
            store,
            net,
            unigram: None,
        })
    }

    /// Whether batches must hold sequences of a single length.
    pub fn needs_equal_lengths(&self) -> bool {
        matches!(self.net, Net::OnlstmSeq { .. } | Net::OnlstmLm(_))
    }

    fn onlstm_run(
        &self,
        tape: &mut Tape,
        embedding: ParamId,
        encoder: &OnLstm,
        seqs: &[&[usize]],
        dropout: Option<&mut Rng>,
    ) -> Result<Vec<Vec<StepVars>>> {
        let len = seqs[0].len();
        if seqs.iter().any(|s| s.len() != len) {
            return Err(Error::contract("ON-LSTM batches need equal lengths"));
        }
        let table = tape.param(embedding);
        let xs = (0..len)
            .map(|t| {
                let ids: Vec<usize> = seqs.iter().map(|s| s[t]).collect();
                tape.embedding(table, &ids)
            })
            .collect::<Result<Vec<_>>>()?;
        encoder.forward(tape, &xs, dropout)
    }

    /// Mean training loss of one batch. `rng` drives dropout and masking.
    /// `None` when the batch has nothing to score.
    pub fn loss(&self, tape: &mut Tape, data: &Data, batch: &[usize], rng: &mut Rng) -> Result<Option<Var>> {
        match (&self.net, data) {
            (Net::OmSeq { encoder, head }, Data::Classify(items)) => {
                let seqs: Vec<&[usize]> = batch.iter().map(|&i| items[i].ids.as_slice()).collect();
                let labels: Vec<usize> = batch.iter().map(|&i| items[i].label).collect();
                let run = encoder.run(tape, &seqs, None)?;
                let logits = head.forward(tape, run.output)?;
                Ok(Some(tape.cross_entropy(logits, &labels)?))
            }
            (Net::OmPair { encoder, head }, Data::Pairs(items)) => {
                let logits = self.pair_logits(tape, encoder, head, items, batch)?;
                let labels: Vec<usize> = batch.iter().map(|&i| items[i].label).collect();
                Ok(Some(tape.cross_entropy(logits, &labels)?))
            }
            (
                Net::OnlstmSeq {
                    embedding,
                    encoder,
                    head,
                },
                Data::Classify(items),
            ) => {
                let seqs: Vec<&[usize]> = batch.iter().map(|&i| items[i].ids.as_slice()).collect();
                let labels: Vec<usize> = batch.iter().map(|&i| items[i].label).collect();
                let steps = self.onlstm_run(tape, *embedding, encoder, &seqs, Some(rng))?;
                let last = steps.last().and_then(|l| l.last()).expect("non-empty run").h;
                let logits = head.forward(tape, last)?;
                Ok(Some(tape.cross_entropy(logits, &labels)?))
            }
            (Net::OnlstmLm(lm), Data::Corpus(items)) => {
                let seqs: Vec<&[usize]> = batch.iter().map(|&i| items[i].ids.as_slice()).collect();
                if seqs[0].len() < 2 {
                    return Ok(None);
                }
                Ok(Some(lm.loss(tape, &seqs, Some(rng))?))
            }
            (Net::Udgn(u), Data::Corpus(items)) => {
                let mut parts = Vec::new();
                let mut total = 0usize;
                for &i in batch {
                    let ids = &items[i].ids;
                    if ids.len() < 2 {
                        continue;
                    }
                    let ms = mask_tokens(ids, self.config.mask_rate, rng, &self.vocab)?;
                    let k = ms.positions.len();
                    if let Some(l) = u.mlm_loss(tape, &ms.inputs, &ms.targets, &ms.positions, ForwardOptions::default())? {
                        parts.push((l, k));
                        total += k;
                    }
                }
                if parts.is_empty() {
                    return Ok(None);
                }
                let weighted = parts
                    .into_iter()
                    .map(|(l, k)| tape.scale(l, k as f64 / total as f64))
                    .collect::<Result<Vec<_>>>()?;
                let stacked = stack_scalars(tape, &weighted)?;
                Ok(Some(tape.sum_all(stacked)?))
            }
            _ => Err(Error::config("dataset does not match the model's task")),
        }
    }

    fn pair_logits(
        &self,
        tape: &mut Tape,
        encoder: &OmEncoder,
        head: &PairHead,
        items: &[super::data::PairItem],
        batch: &[usize],
    ) -> Result<Var> {
        let b = batch.len();
        let mut seqs: Vec<&[usize]> = batch.iter().map(|&i| items[i].left.as_slice()).collect();
        seqs.extend(batch.iter().map(|&i| items[i].right.as_slice()));
        let run = encoder.run(tape, &seqs, None)?;
        let h1 = tape.slice(run.output, 0, 0, b)?;
        let h2 = tape.slice(run.output, 0, b, b)?;
        head.forward(tape, h1, h2)
    }

    /// Class predictions for a classification or pair batch.
    pub fn predict(&self, data: &Data, batch: &[usize]) -> Result<Predictions> {
        let mut tape = Tape::with_params(&self.store);
        match (&self.net, data) {
            (Net::OmSeq { encoder, head }, Data::Classify(items)) => {
                let seqs: Vec<&[usize]> = batch.iter().map(|&i| items[i].ids.as_slice()).collect();
                let run = encoder.run(&mut tape, &seqs, None)?;
                let logits = head.forward(&mut tape, run.output)?;
                let n = encoder.memory.config.slots;
                let trees = seqs
                    .iter()
                    .enumerate()
                    .map(|(b, s)| {
                        let ps: Vec<Vec<f64>> = run.attention[..s.len()]
                            .iter()
                            .map(|&p| column(&tape, p, b, n, seqs.len()))
                            .collect();
                        om_parse(&ps).map(Some)
                    })
                    .collect::<Result<_>>()?;
                Ok(Predictions {
                    labels: argmax_rows(&tape, logits),
                    trees,
                })
            }
            (Net::OmPair { encoder, head }, Data::Pairs(items)) => {
                let logits = self.pair_logits(&mut tape, encoder, head, items, batch)?;
                Ok(Predictions {
                    labels: argmax_rows(&tape, logits),
                    trees: vec![None; batch.len()],
                })
            }
            (
                Net::OnlstmSeq {
                    embedding,
                    encoder,
                    head,
                },
                Data::Classify(items),
            ) => {
                let seqs: Vec<&[usize]> = batch.iter().map(|&i| items[i].ids.as_slice()).collect();
                let steps = self.onlstm_run(&mut tape, *embedding, encoder, &seqs, None)?;
                let top = steps.last().expect("at least one layer");
                let logits = head.forward(&mut tape, top.last().expect("non-empty").h)?;
                let n = seqs[0].len();
                let trees = (0..seqs.len())
                    .map(|b| {
                        let d: Vec<f64> = top[1..].iter().map(|s| tape.value(s.distance)[b]).collect();
                        distance_to_tree(&d, n).map(Some)
                    })
                    .collect::<Result<_>>()?;
                Ok(Predictions {
                    labels: argmax_rows(&tape, logits),
                    trees,
                })
            }
            _ => Err(Error::config("model does not predict labels for this dataset")),
        }
    }

    /// Log-probabilities of the scored tokens of one sentence: masked
    /// positions for the masked LM, next tokens for the left-to-right LM.
    /// Returns `(positions, log_probs)`.
    pub fn token_log_probs(&self, ids: &[usize], rng: &mut Rng) -> Result<(Vec<usize>, Vec<f64>)> {
        match &self.net {
            Net::Udgn(u) => {
                if ids.len() < 2 {
                    return Ok((vec![], vec![]));
                }
                let ms = mask_tokens(ids, self.config.mask_rate, rng, &self.vocab)?;
                if ms.positions.is_empty() {
                    return Ok((vec![], vec![]));
                }
                let mut tape = Tape::with_params(&self.store);
                let run = u.forward(&mut tape, &ms.inputs, ForwardOptions::default())?;
                let lp = tape.log_softmax(run.logits, 1)?;
                let v = self.vocab.len();
                let vals = tape.value(lp);
                let out = ms.positions.iter().map(|&i| vals[i * v + ids[i]]).collect();
                Ok((ms.positions, out))
            }
            Net::OnlstmLm(lm) => {
                let lp = lm.next_token_log_probs(&self.store, ids)?;
                Ok(((1..ids.len()).collect(), lp))
            }
            _ => Err(Error::config("model is not a language model")),
        }
    }

    /// Binary tree for one token sequence, with the per-step attention (OM)
    /// or distances (ON-LSTM) it was read from.
    pub fn constituency(&self, ids: &[usize]) -> Result<(BinaryTree, Vec<Vec<f64>>)> {
        match &self.net {
            Net::OmSeq { encoder, .. } | Net::OmPair { encoder, .. } => {
                let trace = encoder.trace(&self.store, ids)?;
                Ok((om_parse(&trace.p)?, trace.p))
            }
            Net::OnlstmLm(lm) => {
                let enc = lm.encode_sequence(&self.store, ids)?;
                let d = enc.distances.last().expect("at least one layer").clone();
                Ok((distance_to_tree(&d, ids.len())?, vec![d]))
            }
            Net::OnlstmSeq {
                embedding, encoder, ..
            } => {
                let mut tape = Tape::with_params(&self.store);
                let steps = self.onlstm_run(&mut tape, *embedding, encoder, &[ids], None)?;
                let top = steps.last().expect("at least one layer");
                let d: Vec<f64> = top[1..].iter().map(|s| tape.value(s.distance)[0]).collect();
                Ok((distance_to_tree(&d, ids.len())?, vec![d]))
            }
            Net::Udgn(_) => Err(Error::config("constituency parsing needs an om or onlstm checkpoint")),
        }
    }

    pub fn dependency(&self, ids: &[usize]) -> Result<DepParse> {
        match &self.net {
            Net::Udgn(u) => u.parse(&self.store, ids),
            _ => Err(Error::config("dependency parsing needs a udgn checkpoint")),
        }
    }

    pub fn to_checkpoint(&self, epoch: usize, adam: Option<&Adam>) -> Checkpoint {
        let meta = json!({
            "format": FORMAT,
            "config": self.config.to_pairs(),
            "vocab": self.vocab,
            "unigram": self.unigram,
            "epoch": epoch,
            "adam_step": adam.map(|a| a.step_count()),
        });
        let mut ck = Checkpoint::from_store(meta, &self.store);
        if let Some(a) = adam {
            let (m, v) = a.moments();
            let names: Vec<String> = self.store.iter().map(|(_, n, _)| n.to_string()).collect();
            for (name, t) in names.iter().zip(m) {
                ck.push(format!("{ADAM_M}{name}"), t.clone());
            }
            for (name, t) in names.iter().zip(v) {
                ck.push(format!("{ADAM_V}{name}"), t.clone());
            }
        }
        ck
    }

    /// Rebuilds the model. Returns the epoch count and the optimizer
    /// state (with `lr` taken from the stored config) when present.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model, usize, Option<Adam>)> {
        let bad = |what: &str| Error::Checkpoint(format!("manifest lacks {what}"));
        if ck.meta.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let pairs: std::collections::BTreeMap<String, String> =
            serde_json::from_value(ck.meta.get("config").cloned().ok_or_else(|| bad("config"))?)?;
        let pairs: Vec<(String, String)> = pairs.into_iter().collect();
        let config = TrainConfig::from_pairs(&pairs)?;
        let vocab: Vocab = serde_json::from_value(ck.meta.get("vocab").cloned().ok_or_else(|| bad("vocab"))?)?;
        let unigram: Option<Vec<f64>> =
            serde_json::from_value(ck.meta.get("unigram").cloned().unwrap_or(serde_json::Value::Null))?;
        let epoch = ck.meta.get("epoch").and_then(|e| e.as_u64()).unwrap_or(0) as usize;
        let mut model = Model::new(config, vocab)?;
        model.unigram = unigram;
        ck.fill_store(&mut model.store)?;
        let adam = match ck.meta.get("adam_step").and_then(|s| s.as_u64()) {
            Some(step) => {
                let mut adam = Adam::new(&model.store, model.config.lr)?;
                let mut m = Vec::new();
                let mut v = Vec::new();
                for (_, name, _) in model.store.iter() {
                    let get = |prefix: &str| {
                        ck.get(&format!("{prefix}{name}"))
                            .cloned()
                            .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))
                    };
                    m.push(get(ADAM_M)?);
                    v.push(get(ADAM_V)?);
                }
                adam.restore(step, m, v)?;
                Some(adam)
            }
            None => None,
        };
        Ok((model, epoch, adam))
    }
}
