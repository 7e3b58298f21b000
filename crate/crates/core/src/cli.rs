//! Command-line interface.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::checks::{check_model, check_primitives, CheckModel, TinyDims, TOLERANCE};
use crate::error::{Error, Result};
use crate::om::argmax;
use crate::rng::Rng;
use crate::tasks::io::{read_jsonl, write_json, write_jsonl};
use crate::tasks::{
    filter_systematic_split, gen_listops, gen_logic, gen_toy_corpus, ListopsConfig, LogicConfig, Split, ToyConfig,
};
use crate::train::trainer::write_history_csv;
use crate::train::model::Net;
use crate::train::{evaluate, parse_pairs, report, Model, ModelKind, Records, Task, TrainConfig, Trainer};
use crate::udgn::{extract_argmax, to_conll_heads};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "synbias", version, about = "Syntactic inductive bias models: generate, train, parse, evaluate")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset as JSON Lines plus a metadata sidecar.
    Gen(GenArgs),
    /// Train a model; writes a checkpoint, an epoch log and a metric report.
    Train(TrainArgs),
    /// Parse sentences with a trained model.
    Parse(ParseArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Finite-difference gradient check of tiny models.
    Gradcheck(GradcheckArgs),
    /// Print attention traces or dependency matrices as text tables.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenTask {
    Listops,
    Logic,
    Toy,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    pub task: GenTask,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub max_args: usize,
    #[arg(long, default_value_t = 0.25)]
    pub branch_prob: f64,
    /// Longest ListOps sequence; 0 disables the limit.
    #[arg(long, default_value_t = 100)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0)]
    pub min_ops: usize,
    #[arg(long, default_value_t = 6)]
    pub max_ops: usize,
    /// Largest share of any one relation in a logic dataset.
    #[arg(long, default_value_t = 1.0)]
    pub max_class_share: f64,
    /// Hold out pairs matching split A, B or C; they go to `--test-out`.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.4)]
    pub adj_prob: f64,
    #[arg(long, default_value_t = 0.3)]
    pub pp_prob: f64,
    #[arg(long, default_value_t = 0.5)]
    pub plural_prob: f64,
    /// End toy sentences with a `.` token.
    #[arg(long)]
    pub punctuation: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ParseMode {
    Constituency,
    DependencyArgmax,
    DependencyChuliu,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Plain text (one whitespace-tokenized sentence per line) or `.jsonl`
    /// records with a `tokens` field.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ParseMode::Constituency)]
    pub mode: ParseMode,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ordered-memory attention trace, one JSON record per step.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Dependency probabilities and masks, one JSON record per sentence.
    #[arg(long)]
    pub masks: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail (exit 1) unless metric >= value, repeatable.
    #[arg(long = "min", value_name = "METRIC=VALUE")]
    pub min: Vec<String>,
    /// Fail (exit 1) unless metric <= value, repeatable.
    #[arg(long = "max", value_name = "METRIC=VALUE")]
    pub max: Vec<String>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// primitives, onlstm, om, om-pair, udgn or all.
    #[arg(long, default_value = "all")]
    pub model: String,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub chunk: usize,
    #[arg(long, default_value_t = 3)]
    pub slots: usize,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Also print the channel weights of this DGN layer.
    #[arg(long)]
    pub layer: Option<usize>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Contract(_) => EXIT_USAGE,
                _ => EXIT_CHECK,
            }
        }
    }
}

/// Runs one command, writing human-readable output to `out`.
pub fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<i32> {
    match command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Parse(a) => cmd_parse(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn label_counts<T, K: Ord + Serialize>(items: &[T], key: impl Fn(&T) -> K) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for it in items {
        *m.entry(key(it)).or_default() += 1;
    }
    m
}

fn cmd_gen(a: &GenArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let mut rng = Rng::new(a.seed);
    let (params, summary) = match a.task {
        GenTask::Listops => {
            let cfg = ListopsConfig {
                max_depth: a.max_depth,
                max_args: a.max_args,
                branch_prob: a.branch_prob,
                max_len: (a.max_len > 0).then_some(a.max_len),
            };
            let data = gen_listops(&mut rng, a.count, &cfg)?;
            write_jsonl(&a.out, &data)?;
            (
                serde_json::to_value(&cfg)?,
                json!({"count": data.len(), "labels": label_counts(&data, |e| e.label)}),
            )
        }
        GenTask::Logic => {
            let cfg = LogicConfig {
                min_ops: a.min_ops,
                max_ops: a.max_ops,
                max_class_share: a.max_class_share,
            };
            let split = a.split.as_deref().map(str::parse::<Split>).transpose()?;
            if split.is_some() != a.test_out.is_some() {
                return Err(Error::config("--split and --test-out go together"));
            }
            let data = gen_logic(&mut rng, a.count, &cfg)?;
            let mut params = serde_json::to_value(&cfg)?;
            params["split"] = json!(a.split);
            match (split, &a.test_out) {
                (Some(s), Some(test_path)) => {
                    let (train, test) = filter_systematic_split(&data, s)?;
                    write_jsonl(&a.out, &train)?;
                    write_jsonl(test_path, &test)?;
                    (
                        params,
                        json!({
                            "count": data.len(),
                            "train": train.len(),
                            "test": test.len(),
                            "test_file": file_name(test_path),
                            "labels": label_counts(&data, |e| e.label.name()),
                        }),
                    )
                }
                _ => {
                    write_jsonl(&a.out, &data)?;
                    (
                        params,
                        json!({
                            "count": data.len(),
                            "labels": label_counts(&data, |e| e.label.name()),
                            "buckets": label_counts(&data, |e| e.bucket()),
                        }),
                    )
                }
            }
        }
        GenTask::Toy => {
            let cfg = ToyConfig {
                adj_prob: a.adj_prob,
                pp_prob: a.pp_prob,
                plural_prob: a.plural_prob,
                punctuation: a.punctuation,
            };
            let data = gen_toy_corpus(&mut rng, a.count, &cfg)?;
            write_jsonl(&a.out, &data)?;
            (serde_json::to_value(&cfg)?, json!({"count": data.len()}))
        }
    };
    let task = format!("{:?}", a.task).to_lowercase();
    let meta = json!({
        "task": task,
        "seed": a.seed,
        "params": params,
        "summary": summary,
    });
    write_json(&sidecar(&a.out), &meta)?;
    writeln!(out, "wrote {} ({} examples)", a.out.display(), summary["count"])?;
    Ok(EXIT_OK)
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut pairs = match &a.config {
        Some(p) => parse_pairs(&std::fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {o:?} is not key=value")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = a.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    if !pairs.iter().any(|(k, _)| k == "checkpoint") {
        pairs.push(("checkpoint".into(), a.out_dir.join("model.sbl").display().to_string()));
    }
    TrainConfig::from_pairs(&pairs)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let cfg = resolve_config(a)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let train_records = Records::load(cfg.task, &a.train)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let t = Trainer::resume(&Checkpoint::load(path)?, cfg.clone())?;
            if cfg.task == Task::Toy && train_records.vocab(cfg.min_freq)? != t.model.vocab {
                return Err(Error::config("training corpus vocabulary differs from the checkpoint's"));
            }
            t
        }
        None => {
            let vocab = train_records.vocab(cfg.min_freq)?;
            let data = train_records.encode(&vocab)?;
            Trainer::new(Model::new(cfg.clone(), vocab)?, &data)?
        }
    };
    let train = train_records.encode(&trainer.model.vocab)?;
    let valid = match &a.valid {
        Some(p) => Some(Records::load(cfg.task, p)?.encode(&trainer.model.vocab)?),
        None => None,
    };
    let manifest = json!({
        "command": "train",
        "seed": cfg.seed,
        "config": cfg.to_pairs(),
        "train": file_name(&a.train),
        "valid": a.valid.as_deref().map(file_name),
        "resume": a.resume.as_deref().map(file_name),
        "start_epoch": trainer.epoch,
    });
    write_json(&a.out_dir.join("manifest.json"), &manifest)?;
    let result = trainer.fit(&train, valid.as_ref());
    write_history_csv(&a.out_dir.join("epochs.csv"), &trainer.history)?;
    let ev = result?;
    let dataset = file_name(a.valid.as_deref().unwrap_or(&a.train));
    let rep = report(&dataset, &trainer.model.config, &ev);
    write_json(&a.out_dir.join("report.json"), &rep)?;
    for (k, v) in &rep.metrics {
        writeln!(out, "{k}\t{v:.6}")?;
    }
    Ok(EXIT_OK)
}

/// Sentences from plain text or JSONL records with a `tokens` field.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    #[derive(serde::Deserialize)]
    struct Rec {
        tokens: Vec<String>,
    }
    let sentences: Vec<Vec<String>> = if path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl::<Rec>(path)?.into_iter().map(|r| r.tokens).collect()
    } else {
        std::fs::read_to_string(path)?
            .lines()
            .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
            .filter(|s| !s.is_empty())
            .collect()
    };
    if sentences.iter().any(|s| s.is_empty()) {
        return Err(Error::contract("empty sentence in input"));
    }
    Ok(sentences)
}

fn load_model(path: &Path) -> Result<Model> {
    Ok(Model::from_checkpoint(&Checkpoint::load(path)?)?.0)
}

fn cmd_parse(a: &ParseArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let model = load_model(&a.checkpoint)?;
    if a.trace.is_some() && (a.mode != ParseMode::Constituency || model.config.model != ModelKind::Om) {
        return Err(Error::config("--trace needs constituency mode with an om checkpoint"));
    }
    if a.masks.is_some() && a.mode == ParseMode::Constituency {
        return Err(Error::config("--masks needs a dependency mode"));
    }
    let sentences = read_sentences(&a.input)?;
    let mut text = String::new();
    let mut trace = Vec::new();
    let mut masks = Vec::new();
    for (k, toks) in sentences.iter().enumerate() {
        let ids = model.vocab.encode(toks);
        match a.mode {
            ParseMode::Constituency => {
                let (tree, steps) = model.constituency(&ids)?;
                let _ = writeln!(text, "{}", tree.render(toks));
                if a.trace.is_some() {
                    for (t, p) in steps.iter().enumerate() {
                        trace.push(json!({"sentence": k, "t": t + 1, "p": p, "argmax": argmax(p)}));
                    }
                }
            }
            ParseMode::DependencyArgmax | ParseMode::DependencyChuliu => {
                if ids.len() < 2 {
                    return Err(Error::Degenerate(format!("sentence {k} has a single token")));
                }
                let parse = model.dependency(&ids)?;
                let heads = if a.mode == ParseMode::DependencyChuliu {
                    to_conll_heads(&parse.heads)
                } else {
                    extract_argmax(&parse.p).iter().map(|h| h + 1).collect()
                };
                for (i, tok) in toks.iter().enumerate() {
                    let pmax = parse.p[i].iter().copied().fold(0.0, f64::max);
                    let _ = writeln!(text, "{}\t{}\t{}\t{:.6}", i + 1, tok, heads[i], pmax);
                }
                text.push('\n');
                if a.masks.is_some() {
                    masks.push(json!({"tokens": toks, "p": parse.p, "m": parse.m}));
                }
            }
        }
    }
    match &a.out {
        Some(p) => std::fs::write(p, &text)?,
        None => out.write_all(text.as_bytes())?,
    }
    if let Some(p) = &a.trace {
        write_jsonl(p, &trace)?;
    }
    if let Some(p) = &a.masks {
        write_jsonl(p, &masks)?;
    }
    Ok(EXIT_OK)
}

fn parse_threshold(s: &str) -> Result<(String, f64)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("threshold {s:?} is not metric=value")))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("threshold {s:?} has no numeric value")))?;
    Ok((k.trim().to_string(), v))
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let model = load_model(&a.checkpoint)?;
    let data = Records::load(model.config.task, &a.data)?.encode(&model.vocab)?;
    let ev = evaluate(&model, &data)?;
    let rep = report(&file_name(&a.data), &model.config, &ev);
    if let Some(p) = &a.out {
        write_json(p, &rep)?;
    }
    for (k, v) in &rep.metrics {
        writeln!(out, "{k}\t{v:.6}")?;
    }
    for (b, acc) in &ev.buckets {
        writeln!(out, "bucket {b}\t{acc:.6}")?;
    }
    let mut code = EXIT_OK;
    let checks = a
        .min
        .iter()
        .map(|s| parse_threshold(s).map(|t| (t, true)))
        .chain(a.max.iter().map(|s| parse_threshold(s).map(|t| (t, false))));
    for c in checks {
        let ((name, bound), is_min) = c?;
        let v = rep
            .get(&name)
            .ok_or_else(|| Error::config(format!("no metric named {name:?}")))?;
        let ok = if is_min { v >= bound } else { v <= bound };
        if !ok {
            writeln!(out, "FAIL {name} = {v:.6} (bound {bound})")?;
            code = EXIT_CHECK;
        }
    }
    Ok(code)
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let (primitives, models): (bool, Vec<CheckModel>) = match a.model.as_str() {
        "all" => (true, CheckModel::ALL.to_vec()),
        "primitives" => (true, vec![]),
        m => (false, vec![m.parse()?]),
    };
    let dims = TinyDims {
        dim: a.dim,
        chunk: a.chunk,
        slots: a.slots,
        channels: a.channels,
        layers: a.layers,
        len: a.len,
        ..TinyDims::default()
    };
    let mut reports = Vec::new();
    if primitives {
        reports.extend(check_primitives(a.seed)?);
    }
    for m in models {
        reports.push((m.name(), check_model(m, dims, a.seed)?));
    }
    let mut code = EXIT_OK;
    for (name, r) in reports {
        let worst = r.worst.as_ref().map_or("-".to_string(), |(n, i)| format!("{n}[{i}]"));
        let status = if r.max_rel_error < TOLERANCE { "ok" } else { "FAIL" };
        writeln!(out, "{name}\t{:.3e}\t{worst}\t{status}", r.max_rel_error)?;
        if r.max_rel_error >= TOLERANCE {
            code = EXIT_CHECK;
        }
    }
    Ok(code)
}

/// Right-aligned table with a header row and a label column.
pub fn format_table(corner: &str, cols: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(_, v)| v.iter().map(|x| format!("{x:.3}")).collect())
        .collect();
    let label_w = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain([corner.chars().count()])
        .max()
        .unwrap_or(0);
    let widths: Vec<usize> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| {
            cells
                .iter()
                .map(|r| r[j].len())
                .chain([c.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = format!("{corner:<label_w$}");
    for (c, w) in cols.iter().zip(&widths) {
        let _ = write!(s, "  {c:>w$}");
    }
    s.push('\n');
    for ((label, _), r) in rows.iter().zip(&cells) {
        let _ = write!(s, "{label:<label_w$}");
        for (c, w) in r.iter().zip(&widths) {
            let _ = write!(s, "  {c:>w$}");
        }
        s.push('\n');
    }
    s
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let model = load_model(&a.checkpoint)?;
    for toks in read_sentences(&a.input)? {
        let ids = model.vocab.encode(&toks);
        writeln!(out, "# {}", toks.join(" "))?;
        match &model.net {
            Net::Udgn(u) => {
                let parse = model.dependency(&ids)?;
                let rows = |m: &[Vec<f64>]| -> Vec<(String, Vec<f64>)> {
                    toks.iter().cloned().zip(m.iter().cloned()).collect()
                };
                writeln!(out, "{}", format_table("p", &toks, &rows(&parse.p)))?;
                writeln!(out, "{}", format_table("m", &toks, &rows(&parse.m)))?;
                if let Some(l) = a.layer {
                    for (k, ch) in u.channel_weights(&model.store, &ids, l)?.iter().enumerate() {
                        writeln!(out, "{}", format_table(&format!("a_hat[{k}]"), &toks, &rows(ch)))?;
                    }
                }
            }
            _ => {
                let (tree, steps) = model.constituency(&ids)?;
                let (corner, cols): (&str, Vec<String>) = if model.config.model == ModelKind::Om {
                    ("slot", (1..=model.config.slots).map(|i| i.to_string()).collect())
                } else {
                    ("distance", (1..toks.len()).map(|i| format!("{}|{}", i - 1, i)).collect())
                };
                let labels: Vec<String> = if steps.len() == toks.len() { toks.clone() } else { vec!["d".into()] };
                let rows: Vec<(String, Vec<f64>)> = labels.into_iter().zip(steps).collect();
                writeln!(out, "{}", format_table(corner, &cols, &rows))?;
                writeln!(out, "{}\n", tree.render(&toks))?;
            }
        }
    }
    Ok(EXIT_OK)
}
