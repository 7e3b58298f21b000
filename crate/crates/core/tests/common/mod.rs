//! Reference implementations and fixture tables shared by the oracle tests
//! and the acceptance run. Every check returns the number of cases it
//! covered, or a description of the first mismatch.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

use synbias::metrics::{perplexity, uas_uuas, uf1};
use synbias::om::{OmConfig, OmEncoder};
use synbias::onlstm::cummax;
use synbias::udgn::extract::{extract_chuliu, tree_weight};
use synbias::udgn::parser::dependency_mask;
use synbias::udgn::{rows, Activation, Competition, DgnConfig, ForwardOptions, ParserConfig, PositionMode, Udgn, UdgnConfig};
use synbias::{distance_to_tree, BinaryTree, ParamStore, Rng, Tape, Tensor};

pub type Check = Result<usize, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn all_trees(lo: usize, hi: usize) -> Vec<BinaryTree> {
    if hi - lo == 1 {
        return vec![BinaryTree::Leaf(lo)];
    }
    let mut out = Vec::new();
    for k in lo + 1..hi {
        for l in all_trees(lo, k) {
            for r in all_trees(k, hi) {
                out.push(BinaryTree::node(l.clone(), r.clone()));
            }
        }
    }
    out
}

// every node splits at the largest distance inside its span
fn respects(t: &BinaryTree, d: &[f64]) -> bool {
    match t {
        BinaryTree::Leaf(_) => true,
        BinaryTree::Node(l, r) => {
            let lo = l.leaves()[0];
            let k = *l.leaves().last().unwrap();
            let hi = *r.leaves().last().unwrap();
            let top = d[lo..hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            d[k] == top && respects(l, d) && respects(r, d)
        }
    }
}

fn compare_with_brute_force(d: &[f64]) -> Result<(), String> {
    let n = d.len() + 1;
    let ok: Vec<BinaryTree> = all_trees(0, n).into_iter().filter(|t| respects(t, d)).collect();
    ensure!(ok.len() == 1, "{} trees fit distances {d:?}", ok.len());
    let got = distance_to_tree(d, n).map_err(|e| e.to_string())?;
    ensure!(got == ok[0], "distances {d:?}: got {} want {}", got.render_indices(), ok[0].render_indices());
    Ok(())
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Every ordering of distinct distances for sentences of 1 to 5 tokens.
pub fn distance_tree_exhaustive() -> Check {
    let mut cases = 0;
    for n in 1..=5 {
        for perm in permutations(n - 1) {
            let d: Vec<f64> = perm.iter().map(|&v| v as f64).collect();
            compare_with_brute_force(&d)?;
            cases += 1;
        }
    }
    Ok(cases)
}

pub fn distance_tree_random(seed: u64, count: usize) -> Check {
    let mut rng = Rng::new(seed);
    for _ in 0..count {
        let n = rng.inclusive(1, 8);
        let d: Vec<f64> = (0..n - 1).map(|_| rng.normal()).collect();
        compare_with_brute_force(&d)?;
    }
    Ok(count)
}

/// Random valid slot sequence: the first step writes the bottom slot and
/// the stack grows by at most one element per step.
pub fn random_program(rng: &mut Rng, len: usize, slots: usize) -> Vec<usize> {
    let mut ys = vec![slots - 1];
    while ys.len() < len {
        let prev = *ys.last().unwrap();
        ys.push(rng.inclusive(prev.saturating_sub(1), slots - 1));
    }
    ys
}

/// Ordered memory with forced one-hot attention against a shift-reduce
/// stack machine built from the same projection and composition cell.
pub fn om_stack_machine(seed: u64, programs: usize) -> Check {
    let mut rng = Rng::new(seed);
    let vocab = 9;
    let d = 6;
    for program in 0..programs {
        let slots = rng.inclusive(2, 6);
        let config = OmConfig {
            slots,
            dim: d,
            input_dim: 5,
            attn_hidden: 4,
            cell_hidden: 7,
        };
        let mut store = ParamStore::new();
        let enc = OmEncoder::new(vocab, config, &mut store, &mut Rng::new(seed ^ program as u64)).unwrap();
        let len = rng.inclusive(1, 10);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(vocab)).collect();
        let ys = random_program(&mut rng, len, slots);
        let forced: Vec<Vec<usize>> = ys.iter().map(|&y| vec![y]).collect();

        let mut tape = Tape::with_params(&store);
        let run = enc.run(&mut tape, &[&tokens], Some(&forced)).unwrap();
        let frames = enc.memory.frames(&tape, &run);
        let output = tape.value(run.output).to_vec();

        let mut sim = Tape::with_params(&store);
        let table = sim.param(enc.embedding);
        let mhat0 = store.get(enc.memory.mhat0).data();
        let bottom = Tensor::new(vec![1, d], mhat0[(slots - 1) * d..].to_vec()).unwrap();
        // top of the stack is the last element
        let mut stack = vec![sim.constant(bottom).unwrap()];
        let mut last = None;
        for t in 0..len {
            let e = sim.embedding(table, &[tokens[t]]).unwrap();
            let x = enc.memory.project(&mut sim, e).unwrap();
            let y = ys[t];
            ensure!(stack.len() == slots - y, "program {program} step {t}: stack depth {}", stack.len());
            for (depth, &v) in stack.iter().rev().enumerate() {
                ensure!(
                    frames[t].memory[y + depth][0] == sim.value(v),
                    "program {program} step {t}: slot {} differs from the stack",
                    y + depth
                );
            }
            let pops = match ys.get(t + 1) {
                Some(&next) => next + 1 - y,
                None => stack.len(),
            };
            let mut r = x;
            for _ in 0..pops {
                let e = stack.pop().unwrap();
                r = enc.memory.cell(&mut sim, e, r).unwrap();
            }
            stack.push(r);
            last = Some(r);
        }
        ensure!(output == sim.value(last.unwrap()), "program {program}: final output differs");
    }
    Ok(programs)
}

pub fn all_arborescences(p: &[Vec<f64>]) -> Vec<(f64, Vec<Option<usize>>)> {
    let n = p.len();
    let mut out = Vec::new();
    for code in 0..(n as u64).pow(n as u32) {
        let mut c = code;
        // choice n - 1 is the root, otherwise the k-th other token
        let heads: Vec<Option<usize>> = (0..n)
            .map(|i| {
                let k = (c % n as u64) as usize;
                c /= n as u64;
                match k {
                    k if k == n - 1 => None,
                    k if k < i => Some(k),
                    k => Some(k + 1),
                }
            })
            .collect();
        if heads.iter().filter(|h| h.is_none()).count() != 1 {
            continue;
        }
        let acyclic = (0..n).all(|start| {
            let mut cur = start;
            for _ in 0..n {
                match heads[cur] {
                    None => return true,
                    Some(h) => cur = h,
                }
            }
            false
        });
        if acyclic {
            out.push((tree_weight(p, &heads), heads));
        }
    }
    out
}

pub fn random_head_matrix(rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).map(|j| if i == j { 0.0 } else { rng.uniform().powi(2) }).collect();
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Chu-Liu/Edmonds against exhaustive search, `per_size` matrices for each
/// sentence length 2..=6.
pub fn chu_liu_exhaustive(seed: u64, per_size: usize) -> Check {
    let mut rng = Rng::new(seed);
    for n in 2..=6 {
        for case in 0..per_size {
            let p = random_head_matrix(&mut rng, n);
            let got = extract_chuliu(&p).map_err(|e| e.to_string())?;
            let mut all = all_arborescences(&p);
            all.sort_by(|a, b| b.0.total_cmp(&a.0));
            let best = all[0].0;
            let w = tree_weight(&p, &got);
            ensure!((w - best).abs() <= 1e-12 * best.abs().max(1.0), "n={n} case {case}: weight {w} vs optimum {best}");
            if all.len() == 1 || all[1].0 < best - 1e-9 {
                ensure!(got == all[0].1, "n={n} case {case}: heads {got:?} vs {:?}", all[0].1);
            }
        }
    }
    Ok(5 * per_size)
}

fn close(what: &str, got: f64, want: f64) -> Result<(), String> {
    ensure!((got - want).abs() <= 1e-9, "{what}: {got} vs {want}");
    Ok(())
}

fn balanced4() -> BinaryTree {
    BinaryTree::node(
        BinaryTree::node(BinaryTree::Leaf(0), BinaryTree::Leaf(1)),
        BinaryTree::node(BinaryTree::Leaf(2), BinaryTree::Leaf(3)),
    )
}

/// `(pred, gold, f1)`; all fixtures have P = R = F1.
pub fn uf1_table() -> Vec<(Vec<BinaryTree>, Vec<BinaryTree>, f64)> {
    use BinaryTree as B;
    let left = B::left_branching;
    let right = B::right_branching;
    let mixed5 = B::node(
        B::node(B::Leaf(0), B::Leaf(1)),
        B::node(B::Leaf(2), B::node(B::Leaf(3), B::Leaf(4))),
    );
    vec![
        (vec![balanced4()], vec![balanced4()], 1.0),
        (vec![left(3)], vec![right(3)], 0.5),
        (vec![left(2)], vec![right(2)], 1.0),
        (vec![left(4)], vec![right(4)], 1.0 / 3.0),
        (vec![balanced4()], vec![left(4)], 2.0 / 3.0),
        (vec![balanced4()], vec![right(4)], 2.0 / 3.0),
        (vec![left(3), balanced4()], vec![right(3), balanced4()], 0.8),
        (vec![left(5)], vec![mixed5.clone()], 0.5),
        (vec![left(3), left(5)], vec![left(3), mixed5.clone()], 4.0 / 6.0),
        (vec![left(6)], vec![right(6)], 0.2),
        (vec![right(5)], vec![mixed5], 0.75),
        (vec![left(7)], vec![left(7)], 1.0),
    ]
}

pub fn uf1_fixtures() -> Check {
    let table = uf1_table();
    for (k, (pred, gold, f1)) in table.iter().enumerate() {
        let s = uf1(pred, gold).map_err(|e| e.to_string())?;
        close(&format!("uf1 fixture {k} f1"), s.f1, *f1)?;
        close(&format!("uf1 fixture {k} precision"), s.precision, *f1)?;
        close(&format!("uf1 fixture {k} recall"), s.recall, *f1)?;
    }
    let left = BinaryTree::left_branching;
    ensure!(uf1(&[left(3)], &[left(4)]).is_err(), "leaf-count mismatch accepted");
    ensure!(uf1(&[left(3)], &[]).is_err(), "corpus size mismatch accepted");
    Ok(table.len())
}

/// `(pred heads, gold heads, uas, uuas)`, heads 1-indexed with 0 for root.
pub fn attachment_table() -> Vec<(Vec<Vec<usize>>, Vec<Vec<usize>>, f64, f64)> {
    vec![
        (vec![vec![2, 0, 2]], vec![vec![2, 0, 2]], 1.0, 1.0),
        (vec![vec![2, 0, 1]], vec![vec![2, 0, 2]], 2.0 / 3.0, 0.5),
        (vec![vec![2, 3, 0]], vec![vec![0, 1, 2]], 0.0, 1.0),
        (vec![vec![0, 1, 1, 1]], vec![vec![0, 1, 1, 1]], 1.0, 1.0),
        (vec![vec![2, 0, 2, 2]], vec![vec![0, 1, 1, 1]], 0.0, 1.0 / 3.0),
        (vec![vec![0]], vec![vec![0]], 1.0, 1.0),
        (
            vec![vec![2, 0, 1], vec![2, 3, 0]],
            vec![vec![2, 0, 2], vec![0, 1, 2]],
            2.0 / 6.0,
            0.75,
        ),
        (vec![vec![2, 0, 4, 2]], vec![vec![2, 0, 2, 3]], 0.5, 2.0 / 3.0),
        (vec![vec![2, 1, 2]], vec![vec![0, 1, 2]], 2.0 / 3.0, 1.0),
        (vec![vec![0, 0, 0]], vec![vec![0, 1, 2]], 1.0 / 3.0, 0.0),
        (vec![vec![3, 3, 0]], vec![vec![2, 3, 0]], 2.0 / 3.0, 0.5),
    ]
}

pub fn attachment_fixtures() -> Check {
    let table = attachment_table();
    for (k, (pred, gold, uas, uuas)) in table.iter().enumerate() {
        let a = uas_uuas(pred, gold).map_err(|e| e.to_string())?;
        close(&format!("attachment fixture {k} uas"), a.uas, *uas)?;
        close(&format!("attachment fixture {k} uuas"), a.uuas, *uuas)?;
    }
    ensure!(uas_uuas(&[vec![0, 1]], &[vec![0, 0]]).is_err(), "two gold roots accepted");
    ensure!(uas_uuas(&[vec![0, 1]], &[vec![0, 1, 1]]).is_err(), "length mismatch accepted");
    Ok(table.len())
}

pub fn perplexity_table() -> Vec<(Vec<f64>, f64)> {
    let ln = f64::ln;
    vec![
        (vec![ln(0.1); 5], 10.0),
        (vec![0.0; 3], 1.0),
        (vec![ln(0.5), ln(0.5)], 2.0),
        (vec![ln(0.25)], 4.0),
        (vec![ln(0.5), ln(0.25)], 8f64.sqrt()),
        (vec![0.0, ln(0.25)], 2.0),
        (vec![-1.0], std::f64::consts::E),
        (vec![-1.0, -3.0], std::f64::consts::E.powi(2)),
        (vec![ln(0.2); 3], 5.0),
        (vec![ln(0.5), ln(0.125), 0.0], 16f64.cbrt()),
    ]
}

pub fn perplexity_fixtures() -> Check {
    let table = perplexity_table();
    for (k, (lps, ppl)) in table.iter().enumerate() {
        close(&format!("perplexity fixture {k}"), perplexity(lps).map_err(|e| e.to_string())?, *ppl)?;
    }
    ensure!(perplexity(&[]).is_err(), "empty input accepted");
    ensure!(perplexity(&[0.5]).is_err(), "positive log-probability accepted");
    ensure!(perplexity(&[f64::NAN]).is_err(), "NaN accepted");
    Ok(table.len())
}

const TOL: f64 = 1e-9;

pub fn small_encoder(seed: u64, slots: usize) -> (ParamStore, OmEncoder) {
    let mut store = ParamStore::new();
    let cfg = OmConfig {
        slots,
        dim: 4,
        input_dim: 3,
        attn_hidden: 4,
        cell_hidden: 4,
    };
    let enc = OmEncoder::new(7, cfg, &mut store, &mut Rng::new(seed)).unwrap();
    (store, enc)
}

pub fn small_udgn(seed: u64, channels: usize, competition: Competition) -> (ParamStore, Udgn) {
    let cfg = UdgnConfig {
        parser: ParserConfig {
            embed_dim: 4,
            hidden_dim: 4,
            num_tags: 3,
            lstm_layers: 1,
        },
        dgn: DgnConfig {
            layers: 2,
            channels,
            hidden_dim: 4,
            activation: Activation::Tanh,
            gates: true,
            competition,
            position: PositionMode::RelativeBias,
            max_len: 16,
        },
    };
    let mut store = ParamStore::new();
    let model = Udgn::new(cfg, 9, 0, &mut store, &mut Rng::new(seed)).unwrap();
    (store, model)
}

/// Attention distributions of random memories: each sums to one, and the
/// forward and reverse cumulative sums are complementary.
pub fn attention_distributions(seed: u64, count: usize) -> Check {
    let mut rng = Rng::new(seed);
    for case in 0..count {
        let slots = rng.inclusive(2, 6);
        let (store, enc) = small_encoder(rng.next_u64(), slots);
        let tokens: Vec<usize> = (0..rng.inclusive(1, 8)).map(|_| rng.below(7)).collect();
        let trace = enc.trace(&store, &tokens).map_err(|e| e.to_string())?;
        for p in &trace.p {
            ensure!(p.iter().all(|&v| v >= 0.0), "case {case}: negative attention");
            ensure!((p.iter().sum::<f64>() - 1.0).abs() <= TOL, "case {case}: attention sums to {}", p.iter().sum::<f64>());
            let cp: Vec<f64> = p.iter().scan(0.0, |a, v| {
                *a += v;
                Some(*a)
            }).collect();
            for i in 1..slots {
                let rcp: f64 = p[i..].iter().sum();
                ensure!((cp[i - 1] + rcp - 1.0).abs() <= TOL, "case {case}: cp + rcp = {}", cp[i - 1] + rcp);
                ensure!(cp[i] >= cp[i - 1] - TOL, "case {case}: cp decreases");
            }
        }
    }
    Ok(count)
}

pub fn cummax_monotone(seed: u64, count: usize) -> Check {
    let mut rng = Rng::new(seed);
    for case in 0..count {
        let logits: Vec<f64> = (0..rng.inclusive(1, 40)).map(|_| rng.range_f64(-20.0, 20.0)).collect();
        let c = cummax(&logits).map_err(|e| e.to_string())?;
        ensure!(c.windows(2).all(|w| w[1] >= w[0]), "case {case}: cummax decreases");
        ensure!(c.iter().all(|&v| (0.0..=1.0 + TOL).contains(&v)), "case {case}: cummax out of [0, 1]");
        ensure!((c.last().unwrap() - 1.0).abs() <= TOL, "case {case}: cummax ends at {}", c.last().unwrap());
    }
    Ok(count)
}

pub fn fuzzy_or_bounds(seed: u64, count: usize) -> Check {
    let mut rng = Rng::new(seed);
    for case in 0..count {
        let n = rng.inclusive(1, 9);
        let p: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
        let m = dependency_mask(&p).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                ensure!(m[i][j] >= p[i][j].max(p[j][i]) - TOL, "case {case}: mask below max");
                ensure!(m[i][j] <= (p[i][j] + p[j][i]).min(1.0) + TOL, "case {case}: mask above sum");
            }
        }
    }
    Ok(count)
}

/// Channel weights of random graph layers share out the dependency mask.
pub fn channel_competition(seed: u64, count: usize) -> Check {
    let mut rng = Rng::new(seed);
    for case in 0..count {
        let channels = [1, 2, 4][rng.below(3)];
        let (store, model) = small_udgn(rng.next_u64(), channels, Competition::Softmax);
        let len = rng.inclusive(2, 6);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(9)).collect();
        let mut tape = Tape::with_params(&store);
        let run = model.forward(&mut tape, &tokens, ForwardOptions::default()).map_err(|e| e.to_string())?;
        let m = rows(&tape, run.m);
        for layer in &run.attention {
            let a_hat: Vec<Vec<Vec<f64>>> = layer.a_hat.iter().map(|&v| rows(&tape, v)).collect();
            let a: Vec<Vec<Vec<f64>>> = layer.a.iter().map(|&v| rows(&tape, v)).collect();
            for i in 0..len {
                for j in 0..len {
                    let sh: f64 = a_hat.iter().map(|k| k[i][j]).sum();
                    let sa: f64 = a.iter().map(|k| k[i][j]).sum();
                    ensure!((sh - 1.0).abs() <= TOL, "case {case}: channel weights sum to {sh}");
                    ensure!((sa - m[i][j]).abs() <= TOL, "case {case}: {sa} vs mask {}", m[i][j]);
                }
            }
        }
    }
    Ok(count)
}
