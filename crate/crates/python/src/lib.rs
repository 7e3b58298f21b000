//! Python bindings: tree utilities, metrics, dataset generators and a
//! `Model` handle for training, evaluation and parsing.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use synbias::checks::{check_model, CheckModel, TinyDims};
use synbias::metrics::{perplexity as ppl, uas_uuas as attachment, uf1 as f1};
use synbias::tasks::io::write_jsonl;
use synbias::tasks::{gen_listops, gen_logic, gen_toy_corpus, ListopsConfig, LogicConfig, ToyConfig};
use synbias::train::{evaluate as eval_data, Model as Inner, Records, TrainConfig, Trainer};
use synbias::udgn::extract::{extract_argmax as argmax, extract_chuliu as chuliu};
use synbias::udgn::parser::dependency_mask as mask;
use synbias::{BinaryTree, Error, Rng};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Contract(_) | Error::Parse { .. } | Error::Shape { .. } | Error::Vocab { .. } | Error::Degenerate(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

type Heads = Vec<Option<usize>>;

fn trees(texts: &[String]) -> PyResult<Vec<BinaryTree>> {
    texts.iter().map(|t| BinaryTree::parse_brackets(t).map_err(py_err)).collect()
}

/// Builds the binary tree of a sentence from its `n - 1` split distances and
/// returns it bracketed over placeholder words, e.g. `( w0 ( w1 w2 ) )`.
#[pyfunction]
fn distance_to_tree(distances: Vec<f64>) -> PyResult<String> {
    let n = distances.len() + 1;
    Ok(synbias::distance_to_tree(&distances, n).map_err(py_err)?.render_indices())
}

/// Corpus-level unlabelled bracketing F1 between bracketed trees.
/// Returns `(precision, recall, f1)`.
#[pyfunction]
fn uf1(pred: Vec<String>, gold: Vec<String>) -> PyResult<(f64, f64, f64)> {
    let s = f1(&trees(&pred)?, &trees(&gold)?).map_err(py_err)?;
    Ok((s.precision, s.recall, s.f1))
}

/// `(uas, uuas)` for 1-indexed head lists with 0 marking the root.
#[pyfunction]
fn uas_uuas(pred: Vec<Vec<usize>>, gold: Vec<Vec<usize>>) -> PyResult<(f64, f64)> {
    let a = attachment(&pred, &gold).map_err(py_err)?;
    Ok((a.uas, a.uuas))
}

#[pyfunction]
fn perplexity(log_probs: Vec<f64>) -> PyResult<f64> {
    ppl(&log_probs).map_err(py_err)
}

#[pyfunction]
fn dependency_mask(p: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    mask(&p).map_err(py_err)
}

#[pyfunction]
fn extract_argmax(p: Vec<Vec<f64>>) -> Vec<usize> {
    argmax(&p)
}

/// Maximum spanning arborescence; the root's head is `None`.
#[pyfunction]
fn extract_chuliu(p: Vec<Vec<f64>>) -> PyResult<Vec<Option<usize>>> {
    chuliu(&p).map_err(py_err)
}

/// Worst relative gradient error of a tiny model: `onlstm`, `om`,
/// `om-pair` or `udgn`.
#[pyfunction]
#[pyo3(signature = (model, seed = 0))]
fn grad_check(model: &str, seed: u64) -> PyResult<f64> {
    let m: CheckModel = model.parse().map_err(py_err)?;
    Ok(check_model(m, TinyDims::default(), seed).map_err(py_err)?.max_rel_error)
}

/// Writes `count` generated examples of `task` (`listops`, `logic` or
/// `toy`) to a JSONL file.
#[pyfunction]
#[pyo3(signature = (task, count, path, seed = 0))]
fn generate(task: &str, count: usize, path: PathBuf, seed: u64) -> PyResult<()> {
    let mut rng = Rng::new(seed);
    match task {
        "listops" => write_jsonl(&path, &gen_listops(&mut rng, count, &ListopsConfig::default()).map_err(py_err)?),
        "logic" => write_jsonl(&path, &gen_logic(&mut rng, count, &LogicConfig::default()).map_err(py_err)?),
        "toy" => write_jsonl(&path, &gen_toy_corpus(&mut rng, count, &ToyConfig::default()).map_err(py_err)?),
        other => return Err(PyValueError::new_err(format!("unknown task {other:?}"))),
    }
    .map_err(py_err)
}

/// A trained model loaded from, or saved to, a checkpoint file.
#[pyclass]
struct Model {
    inner: Inner,
}

#[pymethods]
impl Model {
    /// Trains on a JSONL dataset with `key = value` config overrides.
    #[staticmethod]
    #[pyo3(signature = (train, config = BTreeMap::new()))]
    fn train(train: PathBuf, config: BTreeMap<String, String>) -> PyResult<Model> {
        let pairs: Vec<(&String, &String)> = config.iter().collect();
        let cfg = TrainConfig::from_pairs(&pairs).map_err(py_err)?;
        let records = Records::load(cfg.task, &train).map_err(py_err)?;
        let vocab = records.vocab(cfg.min_freq).map_err(py_err)?;
        let data = records.encode(&vocab).map_err(py_err)?;
        let model = Inner::new(cfg, vocab).map_err(py_err)?;
        let mut tr = Trainer::new(model, &data).map_err(py_err)?;
        tr.fit(&data, None).map_err(py_err)?;
        Ok(Model { inner: tr.model })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        let ck = synbias::checkpoint::Checkpoint::load(&path).map_err(py_err)?;
        let (inner, _, _) = Inner::from_checkpoint(&ck).map_err(py_err)?;
        Ok(Model { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.to_checkpoint(self.inner.config.epochs, None).save(&path).map_err(py_err)
    }

    /// Resolved training config as strings.
    fn config(&self) -> BTreeMap<String, String> {
        self.inner.config.to_pairs()
    }

    /// Metrics on a JSONL dataset of the model's task.
    fn evaluate(&self, path: PathBuf) -> PyResult<BTreeMap<String, f64>> {
        let records = Records::load(self.inner.config.task, &path).map_err(py_err)?;
        let data = records.encode(&self.inner.vocab).map_err(py_err)?;
        Ok(eval_data(&self.inner, &data).map_err(py_err)?.metrics)
    }

    /// Induced constituency tree over the tokens (ordered memory and
    /// ordered neurons models).
    fn constituency(&self, tokens: Vec<String>) -> PyResult<String> {
        let ids = self.inner.vocab.encode(&tokens);
        let (tree, _) = self.inner.constituency(&ids).map_err(py_err)?;
        Ok(tree.render(&tokens))
    }

    /// Dependency heads (root is `None`) and the head distribution matrix
    /// (dependency graph models).
    fn dependency(&self, tokens: Vec<String>) -> PyResult<(Heads, Vec<Vec<f64>>)> {
        let ids = self.inner.vocab.encode(&tokens);
        let parse = self.inner.dependency(&ids).map_err(py_err)?;
        Ok((parse.heads, parse.p))
    }
}

#[pymodule]
fn pysynbias(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(distance_to_tree, m)?)?;
    m.add_function(wrap_pyfunction!(uf1, m)?)?;
    m.add_function(wrap_pyfunction!(uas_uuas, m)?)?;
    m.add_function(wrap_pyfunction!(perplexity, m)?)?;
    m.add_function(wrap_pyfunction!(dependency_mask, m)?)?;
    m.add_function(wrap_pyfunction!(extract_argmax, m)?)?;
    m.add_function(wrap_pyfunction!(extract_chuliu, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
