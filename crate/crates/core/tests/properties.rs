use proptest::prelude::*;

use synbias::metrics::{uas_uuas, uf1};
use synbias::om::{om_parse, OmConfig, OmEncoder};
use synbias::onlstm::cummax;
use synbias::udgn::parser::dependency_mask;
use synbias::udgn::{rows, Activation, Competition, DgnConfig, ForwardOptions, ParserConfig, PositionMode, Udgn, UdgnConfig};
use synbias::{distance_to_tree, BinaryTree, ParamStore, Rng, Tape};

const TOL: f64 = 1e-9;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 1000,
        ..ProptestConfig::default()
    }
}

fn encoder(seed: u64, slots: usize) -> (ParamStore, OmEncoder) {
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

fn udgn(seed: u64, channels: usize, competition: Competition) -> (ParamStore, Udgn) {
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

fn random_tree(rng: &mut Rng, n: usize) -> BinaryTree {
    let d: Vec<f64> = (0..n - 1).map(|_| rng.uniform()).collect();
    distance_to_tree(&d, n).unwrap()
}

// Gold heads from a random insertion order: each token attaches to an
// earlier one, the first is the root.
fn random_gold(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut heads = vec![0; n];
    for k in 1..n {
        heads[order[k]] = order[rng.below(k)] + 1;
    }
    heads
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn attention_is_a_distribution_with_complementary_sums(seed in any::<u64>(), slots in 2usize..6, len in 1usize..8) {
        let (store, enc) = encoder(seed, slots);
        let mut rng = Rng::new(seed ^ 0x55);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(7)).collect();
        let trace = enc.trace(&store, &tokens).unwrap();
        for p in &trace.p {
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= TOL);
            let cp: Vec<f64> = p.iter().scan(0.0, |a, v| { *a += v; Some(*a) }).collect();
            let rcp: Vec<f64> = (0..slots).map(|i| p[i..].iter().sum()).collect();
            for i in 1..slots {
                prop_assert!(cp[i] >= cp[i - 1] - TOL);
                prop_assert!(rcp[i] <= rcp[i - 1] + TOL);
                prop_assert!((cp[i - 1] + rcp[i] - 1.0).abs() <= TOL);
            }
        }
        prop_assert!((trace.p[0][slots - 1] - 1.0).abs() <= TOL);
    }

    #[test]
    fn one_hot_writes_select_slots_exactly(seed in any::<u64>(), slots in 2usize..6, len in 2usize..8) {
        let (store, enc) = encoder(seed, slots);
        let mut rng = Rng::new(seed ^ 0xAA);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(7)).collect();
        let mut ys = vec![slots - 1];
        while ys.len() < len {
            let prev = *ys.last().unwrap();
            ys.push(rng.inclusive(prev.saturating_sub(1), slots - 1));
        }
        let forced: Vec<Vec<usize>> = ys.iter().map(|&y| vec![y]).collect();
        let mut tape = Tape::with_params(&store);
        let run = enc.run(&mut tape, &[&tokens], Some(&forced)).unwrap();
        let frames = enc.memory.frames(&tape, &run);
        for t in 1..len {
            let y = ys[t];
            for i in 0..slots {
                let want = if i <= y { &frames[t - 1].candidates[i][0] } else { &frames[t - 1].memory[i][0] };
                prop_assert_eq!(&frames[t].memory[i][0], want);
            }
            for i in 1..y {
                prop_assert_eq!(&frames[t].candidates[i][0], &frames[t].candidates[0][0]);
            }
        }
    }

    #[test]
    fn om_parse_gives_valid_trees(seed in any::<u64>(), slots in 2usize..8, len in 1usize..12) {
        let mut rng = Rng::new(seed);
        let ps: Vec<Vec<f64>> = (0..len)
            .map(|_| {
                let row: Vec<f64> = (0..slots).map(|_| rng.uniform()).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let tree = om_parse(&ps).unwrap();
        prop_assert!(tree.is_well_formed(len));
    }

    #[test]
    fn cummax_is_a_monotone_cdf(logits in prop::collection::vec(-20.0f64..20.0, 1..40)) {
        let c = cummax(&logits).unwrap();
        for w in c.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        prop_assert!(c.iter().all(|&v| (0.0..=1.0 + TOL).contains(&v)));
        prop_assert!((c.last().unwrap() - 1.0).abs() <= TOL);
    }

    #[test]
    fn fuzzy_or_mask_is_bounded(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = Rng::new(seed);
        let p: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
        let m = dependency_mask(&p).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                prop_assert!((m[i][j] - m[j][i]).abs() <= TOL);
                prop_assert!(m[i][j] >= p[i][j].max(p[j][i]) - TOL);
                prop_assert!(m[i][j] <= (p[i][j] + p[j][i]).min(1.0) + TOL);
            }
        }
    }

    #[test]
    fn channels_compete_for_the_mask(seed in any::<u64>(), channels in 1usize..5, len in 2usize..7) {
        let channels = if 4 % channels == 0 { channels } else { 2 };
        let (store, model) = udgn(seed, channels, Competition::Softmax);
        let mut rng = Rng::new(seed ^ 0x33);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(9)).collect();
        let mut tape = Tape::with_params(&store);
        let run = model.forward(&mut tape, &tokens, ForwardOptions::default()).unwrap();
        let p = rows(&tape, run.p);
        let m = rows(&tape, run.m);
        for (i, row) in p.iter().enumerate() {
            prop_assert_eq!(row[i], 0.0);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= TOL);
        }
        for layer in &run.attention {
            let a_hat: Vec<Vec<Vec<f64>>> = layer.a_hat.iter().map(|&v| rows(&tape, v)).collect();
            let a: Vec<Vec<Vec<f64>>> = layer.a.iter().map(|&v| rows(&tape, v)).collect();
            for i in 0..len {
                for j in 0..len {
                    let sh: f64 = a_hat.iter().map(|k| k[i][j]).sum();
                    let sa: f64 = a.iter().map(|k| k[i][j]).sum();
                    prop_assert!((sh - 1.0).abs() <= TOL);
                    prop_assert!((sa - m[i][j]).abs() <= TOL);
                }
            }
        }
    }

    #[test]
    fn single_channel_weights_equal_the_mask(seed in any::<u64>(), len in 2usize..7) {
        let (store, model) = udgn(seed, 1, Competition::Single);
        let mut rng = Rng::new(seed ^ 0x77);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(9)).collect();
        let mut tape = Tape::with_params(&store);
        let run = model.forward(&mut tape, &tokens, ForwardOptions::default()).unwrap();
        let m = rows(&tape, run.m);
        for layer in &run.attention {
            prop_assert_eq!(layer.a.len(), 1);
            prop_assert_eq!(rows(&tape, layer.a[0]), m.clone());
        }
    }

    #[test]
    fn attachment_scores_respect_edge_counting(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = Rng::new(seed);
        let gold = random_gold(&mut rng, n);
        let pred: Vec<usize> = (0..n).map(|_| rng.below(n + 1)).collect();
        let a = uas_uuas(std::slice::from_ref(&pred), std::slice::from_ref(&gold)).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.uas));
        prop_assert!((0.0..=1.0).contains(&a.uuas));
        let root = gold.iter().position(|&h| h == 0).unwrap();
        let root_ok = usize::from(pred[root] == 0) as f64;
        prop_assert!(a.uas * n as f64 - root_ok <= a.uuas * (n - 1) as f64 + TOL);
        let same = uas_uuas(&[gold.clone()], &[gold]).unwrap();
        prop_assert_eq!((same.uas, same.uuas), (1.0, 1.0));
    }

    #[test]
    fn uf1_swaps_precision_and_recall(seed in any::<u64>(), sizes in prop::collection::vec(1usize..10, 1..5)) {
        let mut rng = Rng::new(seed);
        let a: Vec<BinaryTree> = sizes.iter().map(|&n| random_tree(&mut rng, n)).collect();
        let b: Vec<BinaryTree> = sizes.iter().map(|&n| random_tree(&mut rng, n)).collect();
        let ab = uf1(&a, &b).unwrap();
        let ba = uf1(&b, &a).unwrap();
        prop_assert!((ab.precision - ba.recall).abs() <= TOL);
        prop_assert!((ab.recall - ba.precision).abs() <= TOL);
        prop_assert!((ab.f1 - ba.f1).abs() <= TOL);
    }

    #[test]
    fn boundary_heights_round_trip(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = Rng::new(seed);
        let tree = random_tree(&mut rng, n);
        let back = distance_to_tree(&tree.boundary_heights(), n).unwrap();
        prop_assert_eq!(back, tree);
    }
}
