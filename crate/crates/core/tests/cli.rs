use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use synbias::checkpoint::Checkpoint;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synbias"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn gen_listops(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let (count, seed) = (count.to_string(), seed.to_string());
    assert_eq!(code(&["gen", "listops", "--count", &count, "--seed", &seed, "--out", p(&out)]), 0);
    out
}

const SMALL_OM: [&str; 8] = ["--set", "dim=16", "--set", "cell_hidden=16", "--set", "slots=4", "--set", "batch_size=16"];

fn train_om(data: &Path, out_dir: &Path, epochs: usize, resume: Option<&Path>) -> Output {
    let epochs = format!("epochs={epochs}");
    let mut args = vec!["train", "--train", p(data), "--out-dir", p(out_dir), "--set", &epochs];
    args.extend(SMALL_OM);
    if let Some(r) = resume {
        args.extend(["--resume", p(r)]);
    }
    run(&args)
}

#[test]
fn gen_is_deterministic_for_every_task() {
    let dir = tempfile::tempdir().unwrap();
    for task in ["listops", "logic", "toy"] {
        let a = dir.path().join(format!("{task}-a.jsonl"));
        let b = dir.path().join(format!("{task}-b.jsonl"));
        for out in [&a, &b] {
            assert_eq!(code(&["gen", task, "--count", "200", "--seed", "7", "--out", p(out)]), 0);
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{task}");
        assert_eq!(lines(&a), 200);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(format!("{}.meta.json", a.display())).unwrap()).unwrap();
        assert_eq!(meta["task"], task);
        assert_eq!(meta["seed"], 7);
    }
}

#[test]
fn gen_split_writes_complementary_files() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let test = dir.path().join("test.jsonl");
    let args = ["gen", "logic", "--count", "500", "--seed", "3", "--split", "C", "--out", p(&train), "--test-out", p(&test)];
    assert_eq!(code(&args), 0);
    assert_eq!(lines(&train) + lines(&test), 500);
    assert!(lines(&test) > 0);
    assert_eq!(code(&["gen", "logic", "--count", "5", "--split", "C", "--out", p(&train)]), 2);
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["bogus"]), 2);
    assert_eq!(code(&["gen", "listops", "--out", p(&out), "--max-depth", "0"]), 2);
    assert_eq!(code(&["gen", "logic", "--out", p(&out), "--split", "Z", "--test-out", p(&out)]), 2);
    assert_eq!(code(&["gradcheck", "--model", "nope"]), 2);
    let data = gen_listops(dir.path(), "d.jsonl", 20, 0);
    let od = dir.path().join("run");
    assert_eq!(code(&["train", "--train", p(&data), "--out-dir", p(&od), "--set", "nonsense=1"]), 2);
    assert_eq!(code(&["train", "--train", p(&data), "--out-dir", p(&od), "--set", "model=udgn"]), 2);
    assert_eq!(code(&["train", "--train", p(&dir.path().join("missing.jsonl")), "--out-dir", p(&od)]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn train_writes_artifacts_and_eval_checks_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_listops(dir.path(), "train.jsonl", 500, 1);
    let od = dir.path().join("om");
    let o = train_om(&data, &od, 2, None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "epochs.csv", "report.json", "model.sbl"] {
        assert!(od.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(od.join("epochs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(od.join("report.json")).unwrap()).unwrap();
    let acc = report["metrics"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let ck = od.join("model.sbl");
    assert_eq!(code(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--min", "accuracy=0.0"]), 0);
    assert_eq!(code(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--min", "accuracy=1.01"]), 1);
    assert_eq!(code(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--min", "nothing=1"]), 2);
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_listops(dir.path(), "train.jsonl", 200, 2);
    let full = dir.path().join("full");
    let half = dir.path().join("half");
    assert!(train_om(&data, &full, 2, None).status.success());
    assert!(train_om(&data, &half, 1, None).status.success());
    let ck = half.join("model.sbl");
    let o = train_om(&data, &half, 2, Some(&ck));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = Checkpoint::load(&full.join("model.sbl")).unwrap();
    let b = Checkpoint::load(&ck).unwrap();
    assert_eq!(a.tensors, b.tensors);
    assert_eq!(a.meta["epoch"], 2);
    assert_eq!(b.meta["epoch"], 2);

    let arch = run(&["train", "--train", p(&data), "--out-dir", p(&dir.path().join("x")), "--set", "dim=8", "--resume", p(&ck)]);
    assert_eq!(arch.status.code(), Some(2));
}

#[test]
fn parse_handles_short_sentences() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_listops(dir.path(), "train.jsonl", 50, 4);
    let od = dir.path().join("om");
    assert!(train_om(&data, &od, 1, None).status.success());
    let ck = od.join("model.sbl");
    let input = dir.path().join("in.txt");
    std::fs::write(&input, "[MIN 7 ]\n3 4\n5\n").unwrap();
    let trace = dir.path().join("trace.jsonl");
    let o = run(&["parse", "--checkpoint", p(&ck), "--input", p(&input), "--trace", p(&trace)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let out: Vec<&str> = text.lines().collect();
    assert_eq!(out.len(), 3);
    assert_eq!(out[1], "( 3 4 )");
    assert_eq!(out[2], "5");
    assert_eq!(lines(&trace), 3 + 2 + 1);
    let dep = run(&["parse", "--checkpoint", p(&ck), "--input", p(&input), "--mode", "dependency-argmax"]);
    assert_eq!(dep.status.code(), Some(2));

    let toy = dir.path().join("toy.jsonl");
    assert_eq!(code(&["gen", "toy", "--count", "60", "--seed", "1", "--out", p(&toy)]), 0);
    let ud = dir.path().join("udgn");
    let args = [
        "train", "--train", p(&toy), "--out-dir", p(&ud), "--set", "task=toy", "--set", "model=udgn", "--set", "epochs=1",
        "--set", "dim=8", "--set", "parser_hidden=8", "--set", "tags=4", "--set", "channels=2", "--set", "dgn_layers=1",
    ];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pairs = dir.path().join("pairs.txt");
    std::fs::write(&pairs, "the dog\nthe big dog sleeps .\n").unwrap();
    let masks = dir.path().join("masks.jsonl");
    let uck = ud.join("model.sbl");
    let o = run(&["parse", "--checkpoint", p(&uck), "--input", p(&pairs), "--mode", "dependency-chuliu", "--masks", p(&masks)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let blocks: Vec<Vec<Vec<&str>>> = text
        .split("\n\n")
        .filter(|b| !b.trim().is_empty())
        .map(|b| b.lines().map(|l| l.split('\t').collect()).collect())
        .collect();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0].len(), 2);
    for block in &blocks {
        assert_eq!(block.iter().filter(|r| r[2] == "0").count(), 1);
        for r in block {
            assert_eq!(r.len(), 4);
            let pmax: f64 = r[3].parse().unwrap();
            assert!((0.0..=1.0).contains(&pmax));
        }
    }
    let heads: Vec<&str> = blocks[0].iter().map(|r| r[2]).collect();
    assert!(heads == ["2", "0"] || heads == ["0", "1"], "{heads:?}");
    assert_eq!(lines(&masks), 2);
    let one = dir.path().join("one.txt");
    std::fs::write(&one, "dog\n").unwrap();
    assert_eq!(code(&["parse", "--checkpoint", p(&uck), "--input", p(&one), "--mode", "dependency-argmax"]), 1);
}

#[test]
fn gradcheck_exits_cleanly_when_all_checks_pass() {
    let o = run(&["gradcheck", "--model", "om"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("om\t"));
    assert!(text.trim_end().ends_with("ok"));
}
