//! Randomized invariants over task generation, the model and the analyses.

use std::collections::HashSet;

use proptest::prelude::*;

use attnguide::analysis::{capture, connectivity_graph, gate_saturation, heatmap_csv, parse_heatmap_csv, Signal};
use attnguide::numcore::{softmax, Matrix, Rng};
use attnguide::seq2seq::{ag_loss, attention_targets, Layer, Mode, ModelConfig, Seq2SeqModel};
use attnguide::taskgen::{DatasetBundle, Split, SplitConfig};

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| prop::collection::vec(-2.0f64..2.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_sizes_hold_for_any_seed(seed in any::<u64>()) {
        let b = DatasetBundle::generate(seed, SplitConfig::default());
        let counts: Vec<usize> = Split::ALL.iter().map(|&s| b.split(s).len()).collect();
        prop_assert_eq!(counts, vec![232, 56, 64, 192, 32]);
    }

    #[test]
    fn test_inputs_never_appear_in_training(seed in any::<u64>()) {
        let b = DatasetBundle::generate(seed, SplitConfig::default());
        let train: HashSet<_> = b.train.iter().map(|e| e.input.clone()).collect();
        let mut seen = HashSet::new();
        for (_, e) in b.test_examples() {
            prop_assert!(!train.contains(&e.input));
            prop_assert!(seen.insert(e.input.clone()), "test input repeated across splits");
        }
    }

    #[test]
    fn targets_follow_the_tables(seed in any::<u64>()) {
        let b = DatasetBundle::generate(seed, SplitConfig::default());
        for &s in Split::ALL.iter() {
            for e in b.split(s) {
                prop_assert_eq!(&b.expected_target(e), &e.target);
            }
        }
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn ag_loss_is_non_negative_and_zero_on_target(positions in prop::collection::vec(0usize..4, 1..5), logits in prop::collection::vec(-5.0f64..5.0, 16)) {
        let t = attention_targets(&positions, 4);
        prop_assert_eq!(ag_loss(&t, &t).unwrap(), 0.0);
        let rows: Vec<Vec<f64>> = (0..positions.len()).map(|r| softmax(&logits[r * 4 % 16..r * 4 % 16 + 4])).collect();
        prop_assert!(ag_loss(&Matrix::from_rows(&rows), &t).unwrap() >= 0.0);
    }

    #[test]
    fn graph_edges_shrink_as_threshold_grows(m in matrix(6, 6), a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let g_lo = connectivity_graph("w", &m, lo).unwrap();
        let g_hi = connectivity_graph("w", &m, hi).unwrap();
        prop_assert!(g_hi.edges.len() <= g_lo.edges.len());
        prop_assert!(g_hi.edges.iter().all(|e| e.weight.abs() >= hi));
        prop_assert_eq!(connectivity_graph("w", &m, 0.0).unwrap().edges.len(), m.len());
    }

    #[test]
    fn heatmap_csv_round_trips(m in matrix(5, 7)) {
        prop_assert_eq!(parse_heatmap_csv(&heatmap_csv("w", &m)).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn activations_stay_in_range(seed in any::<u64>(), guided in any::<bool>(), scale in 0.05f64..2.0) {
        let mode = if guided { Mode::Guided } else { Mode::Baseline };
        let cfg = ModelConfig { init_scale: scale, ..ModelConfig::small(4, 6) };
        let model = Seq2SeqModel::new(cfg, mode, &mut Rng::seeded(seed));
        let b = DatasetBundle::generate(seed, SplitConfig::default());
        let ex: Vec<_> = b.new_compositions.iter().enumerate().map(|(i, e)| (Split::NewCompositions, i, e)).collect();
        let traces = capture(&model, &ex);
        for t in &traces.traces {
            for step in t.encoder.iter().chain(&t.decoder) {
                prop_assert!(step.z.iter().chain(&step.r).all(|&g| (0.0..=1.0).contains(&g)));
                prop_assert!(step.h.iter().all(|&h| h.abs() <= 1.0));
            }
            for row in &t.attention {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        for layer in [Layer::Encoder, Layer::Decoder] {
            for gate in [Signal::Update, Signal::Reset] {
                let s = gate_saturation(&traces, layer, gate, 0.1, 0.9).unwrap();
                prop_assert!(s.left.iter().zip(&s.right).all(|(l, r)| *l >= 0.0 && *r >= 0.0 && l + r <= 1.0 + 1e-12));
            }
        }
    }
}
