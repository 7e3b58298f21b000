//! Training loop, evaluation and run artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, perplexity, uas_uuas, uf1, Buckets, MetricReport};
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::udgn::{extract_argmax, to_conll_heads};

use super::config::TrainConfig;
use super::data::{eval_batches, length_batches, Data};
use super::model::{unigram_log_probs, Model, Net};

const SHUFFLE_STREAM: u64 = 0x5A0F;
const NOISE_STREAM: u64 = 0xD20F;
const EVAL_STREAM: u64 = 0xE7A1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub metrics: BTreeMap<String, f64>,
    pub buckets: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub metrics: BTreeMap<String, f64>,
}

pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(mut model: Model, train: &Data) -> Result<Self> {
        if model.unigram.is_none() {
            model.unigram = unigram_log_probs(train, model.vocab.len());
        }
        let adam = Adam::new(&model.store, model.config.lr)?;
        Ok(Trainer {
            model,
            adam,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Continues from a checkpoint under `config`, which must describe the
    /// same architecture; run settings such as `epochs` and `lr` follow
    /// `config`.
    pub fn resume(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let (mut model, epoch, adam) = Model::from_checkpoint(ck)?;
        if model.config.architecture() != config.architecture() {
            let diff: Vec<String> = config
                .architecture()
                .into_iter()
                .filter(|(k, v)| model.config.architecture().get(k) != Some(v))
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            return Err(Error::config(format!(
                "checkpoint was trained with a different architecture ({})",
                diff.join(", ")
            )));
        }
        model.config = config;
        let mut adam = adam.unwrap_or(Adam::new(&model.store, model.config.lr)?);
        adam.lr = model.config.lr;
        Ok(Trainer {
            model,
            adam,
            epoch,
            history: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.model.to_checkpoint(self.epoch, Some(&self.adam))
    }

    fn save(&self) -> Result<()> {
        if let Some(path) = &self.model.config.checkpoint {
            self.checkpoint().save(path)?;
        }
        Ok(())
    }

    /// One pass over `data`; returns the mean batch loss. On a non-finite
    /// loss or gradient the current (finite) parameters are checkpointed
    /// and training stops with [`Error::Diverged`].
    pub fn train_epoch(&mut self, data: &Data) -> Result<f64> {
        let cfg = &self.model.config;
        let root = Rng::new(cfg.seed);
        let mut order_rng = root.split(SHUFFLE_STREAM + self.epoch as u64);
        let mut noise_rng = root.split(NOISE_STREAM + self.epoch as u64);
        let batches = length_batches(data, cfg.batch_size, self.model.needs_equal_lengths(), &mut order_rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (k, batch) in batches.iter().enumerate() {
            let mut tape = Tape::with_params(&self.model.store);
            let loss = match self.model.loss(&mut tape, data, batch, &mut noise_rng) {
                Ok(Some(l)) => l,
                Ok(None) => continue,
                Err(e @ Error::Numeric { .. }) => return self.diverged(k, &e.to_string()),
                Err(e) => return Err(e),
            };
            let value = tape.item(loss);
            let grads = match tape.backward(loss) {
                Ok(g) => g.param_grads(&self.model.store),
                Err(e @ Error::Numeric { .. }) => return self.diverged(k, &e.to_string()),
                Err(e) => return Err(e),
            };
            let mut grads = grads;
            if !value.is_finite() || !grads.is_finite() {
                return self.diverged(k, "non-finite loss or gradient");
            }
            grads.clip_global_norm(self.model.config.clip);
            self.adam.update(&mut self.model.store, &grads)?;
            sum += value * batch.len() as f64;
            count += batch.len();
        }
        self.epoch += 1;
        if count == 0 {
            return Err(Error::contract("no batch produced a loss"));
        }
        Ok(sum / count as f64)
    }

    fn diverged(&self, batch: usize, what: &str) -> Result<f64> {
        self.save()?;
        Err(Error::Diverged(format!("epoch {}, batch {batch}: {what}", self.epoch + 1)))
    }

    /// Trains until `config.epochs` epochs are complete, evaluating on
    /// `valid` (or `train`) every `eval_every` epochs and at the end.
    pub fn fit(&mut self, train: &Data, valid: Option<&Data>) -> Result<Evaluation> {
        let target = self.model.config.epochs;
        let mut last = None;
        while self.epoch < target {
            let loss = self.train_epoch(train)?;
            let due = self.epoch.is_multiple_of(self.model.config.eval_every) || self.epoch == target;
            let metrics = if due {
                let ev = evaluate(&self.model, valid.unwrap_or(train))?;
                let m = ev.metrics.clone();
                last = Some(ev);
                self.save()?;
                m
            } else {
                BTreeMap::new()
            };
            log::info!("epoch {} loss {loss:.6} {metrics:?}", self.epoch);
            self.history.push(EpochLog {
                epoch: self.epoch,
                loss,
                metrics,
            });
        }
        match last {
            Some(ev) => Ok(ev),
            None => evaluate(&self.model, valid.unwrap_or(train)),
        }
    }
}

pub fn evaluate(model: &Model, data: &Data) -> Result<Evaluation> {
    let mut ev = Evaluation::default();
    match data {
        Data::Classify(_) | Data::Pairs(_) => {
            let (mut pred, mut gold) = (Vec::new(), Vec::new());
            let (mut ptrees, mut gtrees) = (Vec::new(), Vec::new());
            let mut buckets = Buckets::default();
            for batch in eval_batches(data, model.config.batch_size, model.needs_equal_lengths()) {
                let out = model.predict(data, &batch)?;
                for (k, &i) in batch.iter().enumerate() {
                    let (label, bucket, tree) = match data {
                        Data::Classify(v) => (v[i].label, v[i].bucket, v[i].tree.as_ref()),
                        Data::Pairs(v) => (v[i].label, v[i].bucket, None),
                        Data::Corpus(_) => unreachable!(),
                    };
                    buckets.record(bucket, out.labels[k] == label);
                    pred.push(out.labels[k]);
                    gold.push(label);
                    if let (Some(p), Some(g)) = (&out.trees[k], tree) {
                        ptrees.push(p.clone());
                        gtrees.push(g.clone());
                    }
                }
            }
            ev.metrics.insert("accuracy".into(), accuracy(&pred, &gold)?);
            if !gtrees.is_empty() {
                let s = uf1(&ptrees, &gtrees)?;
                ev.metrics.insert("uf1".into(), s.f1);
                ev.metrics.insert("uf1_precision".into(), s.precision);
                ev.metrics.insert("uf1_recall".into(), s.recall);
            }
            ev.buckets = buckets.accuracy();
        }
        Data::Corpus(items) => {
            let mut rng = Rng::new(model.config.seed).split(EVAL_STREAM);
            let (mut lps, mut base) = (Vec::new(), Vec::new());
            let (mut pred, mut pred_argmax, mut gold) = (Vec::new(), Vec::new(), Vec::new());
            for s in items {
                let (pos, lp) = model.token_log_probs(&s.ids, &mut rng)?;
                if let Some(u) = &model.unigram {
                    base.extend(pos.iter().map(|&i| u[s.ids[i]]));
                }
                lps.extend(lp);
                if matches!(model.net, Net::Udgn(_)) && !s.heads.is_empty() && s.ids.len() >= 2 {
                    let parse = model.dependency(&s.ids)?;
                    pred.push(to_conll_heads(&parse.heads));
                    pred_argmax.push(extract_argmax(&parse.p).iter().map(|h| h + 1).collect());
                    gold.push(s.heads.clone());
                }
            }
            ev.metrics.insert("ppl".into(), perplexity(&lps)?);
            if !base.is_empty() {
                ev.metrics.insert("unigram_ppl".into(), perplexity(&base)?);
            }
            if !gold.is_empty() {
                let a = uas_uuas(&pred, &gold)?;
                ev.metrics.insert("uas".into(), a.uas);
                ev.metrics.insert("uuas".into(), a.uuas);
                let b = uas_uuas(&pred_argmax, &gold)?;
                ev.metrics.insert("uas_argmax".into(), b.uas);
                ev.metrics.insert("uuas_argmax".into(), b.uuas);
            }
        }
    }
    Ok(ev)
}

/// Final report for a run: metrics, buckets and the resolved config.
pub fn report(dataset: &str, config: &TrainConfig, ev: &Evaluation) -> MetricReport {
    let mut r = MetricReport::new(dataset, config.seed);
    r.metrics = ev.metrics.clone();
    if !ev.buckets.is_empty() {
        r.buckets.insert("accuracy".into(), ev.buckets.clone());
    }
    r.config = config.to_pairs();
    r
}

/// `epoch,loss,<metrics...>` with blank cells for epochs without evaluation.
pub fn history_csv(history: &[EpochLog]) -> String {
    let mut names: Vec<&String> = history.iter().flat_map(|h| h.metrics.keys()).collect();
    names.sort();
    names.dedup();
    let mut out = String::from("epoch,loss");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for h in history {
        let _ = write!(out, "{},{}", h.epoch, h.loss);
        for n in &names {
            out.push(',');
            if let Some(v) = h.metrics.get(*n) {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_history_csv(path: &Path, history: &[EpochLog]) -> Result<()> {
    std::fs::write(path, history_csv(history))?;
    Ok(())
}
