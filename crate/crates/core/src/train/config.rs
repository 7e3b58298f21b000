//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::udgn::{Activation, Competition, PositionMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Listops,
    Logic,
    Toy,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "listops" => Ok(Task::Listops),
            "logic" => Ok(Task::Logic),
            "toy" => Ok(Task::Toy),
            _ => Err(Error::config(format!("unknown task {s:?}"))),
        }
    }
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Listops => "listops",
            Task::Logic => "logic",
            Task::Toy => "toy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Om,
    Onlstm,
    Udgn,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "om" => Ok(ModelKind::Om),
            "onlstm" => Ok(ModelKind::Onlstm),
            "udgn" => Ok(ModelKind::Udgn),
            _ => Err(Error::config(format!("unknown model {s:?}"))),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Om => "om",
            ModelKind::Onlstm => "onlstm",
            ModelKind::Udgn => "udgn",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Evaluate (and checkpoint) every this many epochs.
    pub eval_every: usize,
    pub clip: f64,
    pub checkpoint: Option<PathBuf>,

    pub dim: usize,
    pub slots: usize,
    /// Hidden width of the ordered-memory composition cell.
    pub cell_hidden: usize,
    pub chunk: usize,
    pub layers: usize,
    pub dropout: f64,

    pub dgn_layers: usize,
    pub channels: usize,
    pub parser_hidden: usize,
    pub parser_layers: usize,
    pub tags: usize,
    pub activation: Activation,
    pub gates: bool,
    pub competition: Competition,
    pub position: PositionMode,
    pub max_len: usize,
    pub mask_rate: f64,
    pub min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Listops,
            model: ModelKind::Om,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            eval_every: 1,
            clip: 5.0,
            checkpoint: None,
            dim: 64,
            slots: 8,
            chunk: 4,
            layers: 1,
            dropout: 0.0,
            dgn_layers: 3,
            channels: 4,
            parser_hidden: 64,
            cell_hidden: 64,
            parser_layers: 1,
            tags: 32,
            activation: Activation::Tanh,
            gates: true,
            competition: Competition::Softmax,
            position: PositionMode::RelativeBias,
            max_len: 128,
            mask_rate: 0.3,
            min_freq: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("invalid value {value:?} for {key}"))),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Identity => "identity",
        Activation::Tanh => "tanh",
        Activation::Relu => "relu",
        Activation::Elu => "elu",
    }
}

fn competition_name(c: Competition) -> &'static str {
    match c {
        Competition::Softmax => "softmax",
        Competition::Sigmoid => "sigmoid",
        Competition::Single => "single",
    }
}

fn position_name(p: PositionMode) -> &'static str {
    match p {
        PositionMode::RelativeBias => "relative",
        PositionMode::Absolute => "absolute",
    }
}

/// Splits `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.task = value.parse()?,
            "model" => self.model = value.parse()?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "checkpoint" => {
                self.checkpoint = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            "dim" => self.dim = parse(key, value)?,
            "slots" => self.slots = parse(key, value)?,
            "chunk" => self.chunk = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "dgn_layers" => self.dgn_layers = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "parser_hidden" => self.parser_hidden = parse(key, value)?,
            "cell_hidden" => self.cell_hidden = parse(key, value)?,
            "parser_layers" => self.parser_layers = parse(key, value)?,
            "tags" => self.tags = parse(key, value)?,
            "activation" => self.activation = value.parse()?,
            "gates" => self.gates = parse_bool(key, value)?,
            "competition" => self.competition = value.parse()?,
            "position" => self.position = value.parse()?,
            "max_len" => self.max_len = parse(key, value)?,
            "mask_rate" => self.mask_rate = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in pairs {
            cfg.set(k.as_ref(), v.as_ref())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its resolved value, sorted by key.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let entries: Vec<(&str, String)> = vec![
            ("task", self.task.name().into()),
            ("model", self.model.name().into()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("clip", self.clip.to_string()),
            (
                "checkpoint",
                self.checkpoint.as_ref().map_or(String::new(), |p| p.display().to_string()),
            ),
            ("dim", self.dim.to_string()),
            ("slots", self.slots.to_string()),
            ("chunk", self.chunk.to_string()),
            ("layers", self.layers.to_string()),
            ("dropout", self.dropout.to_string()),
            ("dgn_layers", self.dgn_layers.to_string()),
            ("channels", self.channels.to_string()),
            ("parser_hidden", self.parser_hidden.to_string()),
            ("cell_hidden", self.cell_hidden.to_string()),
            ("parser_layers", self.parser_layers.to_string()),
            ("tags", self.tags.to_string()),
            ("activation", activation_name(self.activation).into()),
            ("gates", self.gates.to_string()),
            ("competition", competition_name(self.competition).into()),
            ("position", position_name(self.position).into()),
            ("max_len", self.max_len.to_string()),
            ("mask_rate", self.mask_rate.to_string()),
            ("min_freq", self.min_freq.to_string()),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The keys that determine parameter shapes; a checkpoint can only be
    /// resumed under a config that agrees on all of them.
    pub fn architecture(&self) -> BTreeMap<String, String> {
        const KEYS: [&str; 17] = [
            "task",
            "model",
            "dim",
            "slots",
            "cell_hidden",
            "chunk",
            "layers",
            "dgn_layers",
            "channels",
            "parser_hidden",
            "parser_layers",
            "tags",
            "activation",
            "gates",
            "competition",
            "position",
            "max_len",
        ];
        let all = self.to_pairs();
        KEYS.iter().map(|k| (k.to_string(), all[*k].clone())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("dim", self.dim),
            ("layers", self.layers),
            ("dgn_layers", self.dgn_layers),
            ("channels", self.channels),
            ("parser_hidden", self.parser_hidden),
            ("cell_hidden", self.cell_hidden),
            ("parser_layers", self.parser_layers),
            ("tags", self.tags),
            ("max_len", self.max_len),
            ("min_freq", self.min_freq),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{k} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::config("clip must be positive"));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::config("mask_rate must be in (0, 1)"));
        }
        match (self.task, self.model) {
            (Task::Listops, ModelKind::Om | ModelKind::Onlstm)
            | (Task::Logic, ModelKind::Om)
            | (Task::Toy, ModelKind::Udgn | ModelKind::Onlstm) => Ok(()),
            (t, m) => Err(Error::config(format!(
                "model {} is not available for task {}",
                m.name(),
                t.name()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_pairs() {
        let text = "task = logic\n# comment\nlr=0.002  # trailing\ncompetition = sigmoid\n";
        let cfg = TrainConfig::from_pairs(&parse_pairs(text).unwrap()).unwrap();
        assert_eq!(cfg.task, Task::Logic);
        assert_eq!(cfg.lr, 0.002);
        let pairs: Vec<_> = cfg.to_pairs().into_iter().collect();
        assert_eq!(TrainConfig::from_pairs(&pairs).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::from_pairs(&[("nope", "1")]).is_err());
        assert!(TrainConfig::from_pairs(&[("epochs", "0")]).is_err());
        assert!(TrainConfig::from_pairs(&[("lr", "abc")]).is_err());
        assert!(TrainConfig::from_pairs(&[("task", "logic"), ("model", "udgn")]).is_err());
        assert!(parse_pairs("no equals sign").is_err());
    }
}
