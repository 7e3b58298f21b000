//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if a hard criterion fails. Criteria 7 and 8 are soft
//! targets and the ablation half of criterion 9 is reported only: those
//! lines can read FAIL without failing the run.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use synbias::checks::{check_model, check_primitives, CheckModel, TinyDims, TOLERANCE};
use synbias::tasks::{gen_listops, gen_logic, gen_toy_corpus, ListopsConfig, LogicConfig, ToyConfig};
use synbias::train::{evaluate, Data, Model, Records, TrainConfig, Trainer};
use synbias::Rng;

type Outcome = Result<String, String>;

/// A failure that is printed but does not fail the run.
const REPORTED: &str = " (reported, not asserted)";

struct Criterion {
    id: usize,
    soft: bool,
    run: fn() -> Outcome,
}

fn counted(what: &str, check: common::Check) -> Outcome {
    check.map(|n| format!("{n} {what}"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut reports = check_primitives(0).map_err(|e| e.to_string())?;
    for m in CheckModel::ALL {
        reports.push((m.name(), check_model(m, TinyDims::default(), 0).map_err(|e| e.to_string())?));
    }
    for (name, r) in &reports {
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, name.to_string());
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{} checks, worst {:.2e} ({}), {:.1}s",
        reports.len(),
        worst.0,
        worst.1,
        elapsed.as_secs_f64()
    );
    if worst.0 < TOLERANCE && elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn distance_trees() -> Outcome {
    let all = common::distance_tree_exhaustive()?;
    let random = common::distance_tree_random(2024, 1000)?;
    Ok(format!("{all} exhaustive and {random} random sequences"))
}

fn stack_machine() -> Outcome {
    counted("programs", common::om_stack_machine(77, 200))
}

fn chu_liu() -> Outcome {
    counted("matrices per length 2..=6", common::chu_liu_exhaustive(99, 100).map(|n| n / 5))
}

fn metric_fixtures() -> Outcome {
    let uf1 = common::uf1_fixtures()?;
    let att = common::attachment_fixtures()?;
    let ppl = common::perplexity_fixtures()?;
    Ok(format!("uf1 {uf1}, attachment {att}, perplexity {ppl} fixtures"))
}

fn distributions() -> Outcome {
    let n = 1000;
    let parts = [
        ("attention", common::attention_distributions(1, n)?),
        ("competition", common::channel_competition(2, n)?),
        ("fuzzy-or", common::fuzzy_or_bounds(3, n)?),
        ("cummax", common::cummax_monotone(4, n)?),
    ];
    Ok(parts.iter().map(|(k, c)| format!("{k} {c}")).collect::<Vec<_>>().join(", "))
}

fn train_model(config: &[(&str, &str)], vocab: synbias::tasks::Vocab, train: &Data) -> Result<Model, String> {
    let cfg = TrainConfig::from_pairs(config).map_err(|e| e.to_string())?;
    let model = Model::new(cfg, vocab).map_err(|e| e.to_string())?;
    let mut tr = Trainer::new(model, train).map_err(|e| e.to_string())?;
    tr.fit(train, None).map_err(|e| e.to_string())?;
    Ok(tr.model)
}

const LISTOPS: [(&str, &str); 7] = [
    ("slots", "8"),
    ("dim", "64"),
    ("cell_hidden", "64"),
    ("batch_size", "64"),
    ("lr", "0.001"),
    ("epochs", "15"),
    ("seed", "0"),
];

fn listops() -> Outcome {
    let start = Instant::now();
    let cfg = ListopsConfig::default();
    let train = Records::Listops(gen_listops(&mut Rng::new(11), 20_000, &cfg).map_err(|e| e.to_string())?);
    let test = Records::Listops(gen_listops(&mut Rng::new(12), 2000, &cfg).map_err(|e| e.to_string())?);
    let vocab = train.vocab(1).map_err(|e| e.to_string())?;
    let train = train.encode(&vocab).map_err(|e| e.to_string())?;
    let test = test.encode(&vocab).map_err(|e| e.to_string())?;
    let model = train_model(&LISTOPS, vocab, &train)?;
    let ev = evaluate(&model, &test).map_err(|e| e.to_string())?;
    let (acc, uf1) = (ev.metrics["accuracy"], ev.metrics["uf1"]);
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let detail = format!("accuracy {acc:.4}, uf1 {uf1:.4}, {minutes:.1} min");
    if acc >= 0.95 && uf1 >= 0.90 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const LOGIC: [(&str, &str); 8] = [
    ("task", "logic"),
    ("slots", "8"),
    ("dim", "64"),
    ("cell_hidden", "64"),
    ("batch_size", "64"),
    ("lr", "0.001"),
    ("epochs", "10"),
    ("seed", "0"),
];

fn logic() -> Outcome {
    let start = Instant::now();
    let short = LogicConfig {
        min_ops: 0,
        max_ops: 6,
        max_class_share: 1.0,
    };
    let long = LogicConfig {
        min_ops: 7,
        max_ops: 12,
        max_class_share: 1.0,
    };
    let train = Records::Logic(gen_logic(&mut Rng::new(21), 50_000, &short).map_err(|e| e.to_string())?);
    let test = Records::Logic(gen_logic(&mut Rng::new(22), 6000, &long).map_err(|e| e.to_string())?);
    let vocab = train.vocab(1).map_err(|e| e.to_string())?;
    let train = train.encode(&vocab).map_err(|e| e.to_string())?;
    let test = test.encode(&vocab).map_err(|e| e.to_string())?;
    let model = train_model(&LOGIC, vocab, &train)?;
    let ev = evaluate(&model, &test).map_err(|e| e.to_string())?;
    let by_len: BTreeMap<usize, f64> = ev.buckets.iter().map(|(&k, &v)| (k, v)).collect();
    let accs: Vec<f64> = (7..=12).map(|k| by_len.get(&k).copied().unwrap_or(f64::NAN)).collect();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let shown: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
    let detail = format!("accuracy by length 7..12 [{}], {minutes:.1} min", shown.join(", "));
    let monotone = accs.windows(2).all(|w| w[1] <= w[0]);
    if accs[0] >= 0.80 && monotone && accs[0] - accs[5] <= 0.20 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn udgn_config(seed: &str, single: bool) -> Vec<(&'static str, String)> {
    let mut pairs = vec![
        ("task", "toy".to_string()),
        ("model", "udgn".into()),
        ("dim", "32".into()),
        ("parser_hidden", "32".into()),
        ("tags", "8".into()),
        ("dgn_layers", "2".into()),
        ("batch_size", "32".into()),
        ("lr", "0.003".into()),
        ("epochs", "10".into()),
        ("seed", seed.into()),
    ];
    if single {
        pairs.extend([("channels", "1".into()), ("competition", "single".into())]);
    } else {
        pairs.extend([("channels", "4".into()), ("competition", "softmax".into())]);
    }
    pairs
}

// The unigram comparison is asserted. Whether the single-channel ablation
// trails the full model is reported per seed: at this scale it follows
// whichever run's parser finds a better graph rather than the channel count.
fn masked_lm() -> Outcome {
    let mut rng = Rng::new(31);
    let train = Records::Toy(gen_toy_corpus(&mut rng, 5000, &ToyConfig::default()).map_err(|e| e.to_string())?);
    let test = Records::Toy(gen_toy_corpus(&mut rng, 500, &ToyConfig::default()).map_err(|e| e.to_string())?);
    let vocab = train.vocab(1).map_err(|e| e.to_string())?;
    let train = train.encode(&vocab).map_err(|e| e.to_string())?;
    let test = test.encode(&vocab).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let (mut beats_unigram, mut ablation_worse) = (true, true);
    for seed in ["0", "1", "2"] {
        let mut ppl = [0.0; 2];
        let mut unigram = 0.0;
        for (k, single) in [false, true].into_iter().enumerate() {
            let pairs = udgn_config(seed, single);
            let pairs: Vec<(&str, &str)> = pairs.iter().map(|(k, v)| (*k, v.as_str())).collect();
            let model = train_model(&pairs, vocab.clone(), &train)?;
            let ev = evaluate(&model, &test).map_err(|e| e.to_string())?;
            ppl[k] = ev.metrics["ppl"];
            unigram = ev.metrics["unigram_ppl"];
        }
        beats_unigram &= ppl[0] <= 0.8 * unigram;
        ablation_worse &= ppl[1] > ppl[0];
        lines.push(format!("seed {seed}: ppl {:.2} vs unigram {unigram:.2}, single channel {:.2}", ppl[0], ppl[1]));
    }
    let detail = format!(
        "{}; unigram margin {}, single channel worse {}",
        lines.join("; "),
        if beats_unigram { "met" } else { "missed" },
        if ablation_worse { "on every seed" } else { "not on every seed" }
    );
    match (beats_unigram, ablation_worse) {
        (true, true) => Ok(detail),
        (false, _) => Err(detail),
        (true, false) => Err(format!("{detail}{REPORTED}")),
    }
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_synbias"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("synbias {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn run_manifests(dir: &Path) -> Result<(), String> {
    let small = ["--set", "dim=16", "--set", "cell_hidden=16", "--set", "slots=4", "--set", "epochs=2"];
    cli(dir, &["gen", "listops", "--count", "300", "--seed", "5", "--out", "listops.jsonl"])?;
    cli(dir, &["gen", "logic", "--count", "300", "--seed", "5", "--split", "B", "--out", "logic.jsonl", "--test-out", "logic-test.jsonl"])?;
    cli(dir, &["gen", "toy", "--count", "200", "--seed", "5", "--out", "toy.jsonl"])?;
    let mut om = vec!["train", "--train", "listops.jsonl", "--valid", "listops.jsonl", "--out-dir", "om"];
    om.extend(small);
    cli(dir, &om)?;
    cli(dir, &["train", "--train", "listops.jsonl", "--out-dir", "onlstm", "--set", "model=onlstm", "--set", "dim=16", "--set", "chunk=4", "--set", "epochs=2"])?;
    let mut pair = vec!["train", "--train", "logic.jsonl", "--valid", "logic-test.jsonl", "--out-dir", "logic", "--set", "task=logic"];
    pair.extend(small);
    cli(dir, &pair)?;
    cli(dir, &[
        "train", "--train", "toy.jsonl", "--out-dir", "udgn", "--set", "task=toy", "--set", "model=udgn", "--set", "dim=8",
        "--set", "parser_hidden=8", "--set", "tags=4", "--set", "channels=2", "--set", "dgn_layers=2", "--set", "epochs=2",
    ])?;
    cli(dir, &["eval", "--checkpoint", "om/model.sbl", "--data", "listops.jsonl", "--out", "om-eval.json"])?;
    cli(dir, &["eval", "--checkpoint", "udgn/model.sbl", "--data", "toy.jsonl", "--out", "udgn-eval.json"])?;
    std::fs::write(dir.join("sentences.txt"), "the dog sees a cat\nsome birds eat the cakes\n").map_err(|e| e.to_string())?;
    cli(dir, &["parse", "--checkpoint", "udgn/model.sbl", "--input", "sentences.txt", "--mode", "dependency-chuliu", "--masks", "masks.jsonl", "--out", "parse.tsv"])?;
    Ok(())
}

fn files(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn reproducibility() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        run_manifests(d.path())?;
    }
    let (a, b) = (files(dirs[0].path())?, files(dirs[1].path())?);
    if a.keys().ne(b.keys()) {
        return Err("runs produced different file sets".into());
    }
    let differing: Vec<&String> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    if differing.is_empty() {
        Ok(format!("{} artifacts identical across two runs", a.len()))
    } else {
        Err(format!("differing artifacts: {differing:?}"))
    }
}

fn main() {
    let criteria = [
        Criterion { id: 1, soft: false, run: gradients },
        Criterion { id: 2, soft: false, run: distance_trees },
        Criterion { id: 3, soft: false, run: stack_machine },
        Criterion { id: 4, soft: false, run: chu_liu },
        Criterion { id: 5, soft: false, run: metric_fixtures },
        Criterion { id: 6, soft: false, run: distributions },
        Criterion { id: 7, soft: true, run: listops },
        Criterion { id: 8, soft: true, run: logic },
        Criterion { id: 9, soft: false, run: masked_lm },
        Criterion { id: 10, soft: false, run: reproducibility },
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut hard_failures = 0;
    for c in criteria.iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id))) {
        let outcome = (c.run)();
        let soft = if c.soft { " (soft)" } else { "" };
        match outcome {
            Ok(d) => println!("criterion {}: PASS{soft} {d}", c.id),
            Err(d) => {
                println!("criterion {}: FAIL{soft} {d}", c.id);
                hard_failures += usize::from(!c.soft && !d.ends_with(REPORTED));
            }
        }
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
