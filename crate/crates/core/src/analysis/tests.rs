use super::*;
use crate::numcore::{Matrix, Rng};
use crate::seq2seq::{Layer, Mode, ModelConfig, Seq2SeqModel};
use crate::taskgen::{DatasetBundle, Split, SplitConfig};

fn tiny_model(seed: u64) -> Seq2SeqModel {
    let cfg = ModelConfig { init_scale: 0.5, ..ModelConfig::small(4, 6) };
    Seq2SeqModel::new(cfg, Mode::Guided, &mut Rng::seeded(seed))
}

fn set_of(steps: Vec<Vec<f64>>, layer: Layer, gate: Signal) -> TraceSet {
    let hidden = steps[0].len();
    let step = |v: &Vec<f64>| {
        let mut s = StepActivations { h: vec![0.0; hidden], z: vec![0.5; hidden], r: vec![0.5; hidden] };
        match gate {
            Signal::Hidden => s.h = v.clone(),
            Signal::Update => s.z = v.clone(),
            Signal::Reset => s.r = v.clone(),
        }
        s
    };
    let acts: Vec<StepActivations> = steps.iter().map(step).collect();
    let (encoder, decoder) = match layer {
        Layer::Encoder => (acts, Vec::new()),
        Layer::Decoder => (Vec::new(), acts),
    };
    let trace = ActivationTrace {
        example_id: 0,
        split: Split::NewCompositions,
        input: vec![0; encoder.len()],
        enc_tables: vec![None; encoder.len()],
        dec_tables: vec![None; decoder.len()],
        attention: vec![vec![1.0]; decoder.len()],
        encoder,
        decoder,
    };
    TraceSet { hidden, traces: vec![trace] }
}

#[test]
fn traces_cover_every_example_deterministically() {
    let bundle = DatasetBundle::generate(3, SplitConfig::default());
    let m = tiny_model(1);
    let a = capture_traces(&m, &bundle);
    assert_eq!(a.len(), Split::ALL.iter().map(|&s| bundle.split(s).len()).sum::<usize>());
    assert_eq!(a, capture_traces(&m, &bundle));
    let mut k = 0;
    for &split in &Split::ALL {
        for (i, ex) in bundle.split(split).iter().enumerate() {
            let t = &a.traces[k];
            assert_eq!((t.split, t.example_id), (split, i));
            assert_eq!(t.encoder.len(), ex.input.len());
            assert_eq!(t.decoder.len(), ex.target.len());
            for s in t.encoder.iter().chain(&t.decoder) {
                assert!(s.z.iter().chain(&s.r).all(|&g| g > 0.0 && g < 1.0));
            }
            k += 1;
        }
    }
}

#[test]
fn traces_match_single_example_capture() {
    let bundle = DatasetBundle::generate(3, SplitConfig::default());
    let m = tiny_model(2);
    let all = capture_traces(&m, &bundle);
    let ex = &bundle.heldout_tables[5];
    let one = capture(&m, &[(Split::HeldoutTables, 5, ex)]);
    let found = all.traces.iter().find(|t| t.split == Split::HeldoutTables && t.example_id == 5).unwrap();
    assert_eq!(&one.traces[0], found);
}

#[test]
fn trace_archive_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = DatasetBundle::generate(4, SplitConfig::default());
    let set = capture_traces(&tiny_model(3), &bundle).test_only();
    write_traces(&set, dir.path()).unwrap();
    assert_eq!(read_traces(dir.path()).unwrap(), set);
    let blob = dir.path().join("traces.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(read_traces(dir.path()), Err(AnalysisError::Format(_))));
}

#[test]
fn heatmap_csv_is_exact() {
    let id = Matrix::identity(4);
    let text = heatmap_csv("identity", &id);
    assert!(text.lines().next().unwrap().starts_with("# identity [4x4]; rows: sending units"));
    assert_eq!(text.lines().nth(2).unwrap(), "0,1,0,0");
    assert_eq!(parse_heatmap_csv(&text).unwrap(), id);
    let mut rng = Rng::seeded(5);
    let m = Matrix::from_vec(3, 5, (0..15).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
    assert_eq!(parse_heatmap_csv(&heatmap_csv("m", &m)).unwrap(), m);
    assert!(heatmap_svg("m", &m).contains("<rect"));
}

#[test]
fn graph_edge_cases() {
    let zero = connectivity_graph("z", &Matrix::zeros(3, 4), 0.1).unwrap();
    assert!(zero.edges.is_empty());
    assert_eq!(zero.kept_fraction, 0.0);
    let full = connectivity_graph("z", &Matrix::zeros(3, 4), 0.0).unwrap();
    assert_eq!(full.edges.len(), 12);
    assert_eq!(full.kept_fraction, 1.0);
    assert!(connectivity_graph("z", &Matrix::zeros(1, 1), -0.1).is_err());
    let m = Matrix::from_rows(&[vec![0.5, -0.3], vec![0.05, 0.2]]);
    let g = connectivity_graph("m", &m, 0.2).unwrap();
    assert_eq!(g.edges.len(), 3);
    assert_eq!(g.out_degree, vec![2, 1]);
    assert_eq!(g.in_degree, vec![1, 2]);
    let dot = g.to_dot();
    assert!(dot.contains("i0 -> o1 [weight=-0.300000, color=blue"));
}

#[test]
fn distributions_are_seeded_and_exact() {
    let mut steps = Vec::new();
    for k in 0..5 {
        steps.push(vec![0.3, k as f64 / 4.0, -0.2 * k as f64]);
    }
    let set = set_of(steps, Layer::Encoder, Signal::Hidden);
    let d = activation_distributions(&set, Layer::Encoder, 3, &mut Rng::seeded(1)).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d[0].iqr(), 0.0);
    assert_eq!(d[0].range(), 0.0);
    assert_eq!((d[1].min, d[1].q1, d[1].median, d[1].q3, d[1].max), (0.0, 0.25, 0.5, 0.75, 1.0));
    let again = activation_distributions(&set, Layer::Encoder, 2, &mut Rng::seeded(9)).unwrap();
    assert_eq!(again, activation_distributions(&set, Layer::Encoder, 2, &mut Rng::seeded(9)).unwrap());
}

#[test]
fn saturation_cases() {
    let half = set_of(vec![vec![0.5, 0.95]; 4], Layer::Decoder, Signal::Update);
    let s = gate_saturation(&half, Layer::Decoder, Signal::Update, 0.1, 0.9).unwrap();
    assert_eq!((s.left[0], s.right[0]), (0.0, 0.0));
    assert_eq!((s.left[1], s.right[1]), (0.0, 1.0));
    assert_eq!(s.right_saturated_share(0.5), 0.5);
    let mut doubled = half.clone();
    doubled.traces.extend(half.traces.clone());
    assert_eq!(gate_saturation(&doubled, Layer::Decoder, Signal::Update, 0.1, 0.9).unwrap().right, s.right);
    assert!(gate_saturation(&half, Layer::Decoder, Signal::Hidden, 0.1, 0.9).is_err());
}

#[test]
fn real_traces_saturation_bounds() {
    let bundle = DatasetBundle::generate(4, SplitConfig::default());
    let set = capture_traces(&tiny_model(8), &bundle).test_only();
    for layer in Layer::BOTH {
        for gate in [Signal::Update, Signal::Reset] {
            let s = gate_saturation(&set, layer, gate, 0.1, 0.9).unwrap();
            assert!(s.left.iter().zip(&s.right).all(|(l, r)| *l >= 0.0 && *r >= 0.0 && l + r <= 1.0));
        }
    }
}

fn toy_separable(n: usize, seed: u64) -> ProbeData {
    let mut rng = Rng::seeded(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % 3;
        // Unit 2 carries the class; the others are noise.
        data.extend_from_slice(&[rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), c as f64 - 1.0, rng.uniform(-1.0, 1.0)]);
        labels.push(c);
    }
    ProbeData::new(Matrix::from_vec(n, 4, data).unwrap(), labels, 3).unwrap()
}

#[test]
fn probe_separates_toy_data() {
    let data = toy_separable(120, 1);
    let probe = train_probe(&data, &ProbeConfig::default()).unwrap();
    assert_eq!(probe.accuracy(&data), 1.0);
    assert_eq!(probe.unit_ranking()[0], 2);
    assert_eq!(probe, train_probe(&data, &ProbeConfig::default()).unwrap());
}

#[test]
fn dominant_unit_forms_group_of_one() {
    let data = toy_separable(200, 2);
    let (_, report) = functional_group("toy", &data, &ProbeConfig::default()).unwrap();
    assert_eq!(report.full_accuracy, 1.0);
    assert_eq!(report.group, vec![2]);
    assert!(report.group_accuracy >= 0.95 * report.full_accuracy);
}

#[test]
fn probe_rejects_degenerate_labels() {
    let data = ProbeData::new(Matrix::zeros(4, 2), vec![1; 4], 3).unwrap();
    assert!(matches!(train_probe(&data, &ProbeConfig::default()), Err(AnalysisError::Probe(_))));
    assert!(ProbeData::new(Matrix::zeros(2, 2), vec![0, 5], 3).is_err());
}

#[test]
fn constant_inputs_give_majority_class() {
    let labels: Vec<usize> = (0..100).map(|i| if i % 4 == 0 { 1 } else { 0 }).collect();
    let data = ProbeData::new(Matrix::filled(100, 3, 0.7), labels, 3).unwrap();
    let probe = train_probe(&data, &ProbeConfig::default()).unwrap();
    assert_eq!(probe.accuracy(&data), 0.75);
}

#[test]
fn shuffled_labels_fall_to_chance() {
    // Eight classes of random activations: held-out accuracy sits near 1/8.
    let mut rng = Rng::seeded(3);
    let n = 800;
    let data: Vec<f64> = (0..n * 16).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let labels = (0..n).map(|i| i % 8).collect();
    let data = ProbeData::new(Matrix::from_vec(n, 16, data).unwrap(), labels, 8).unwrap().shuffled_labels(4);
    let cfg = ProbeConfig { max_iterations: 300, ..ProbeConfig::default() };
    let (_, report) = functional_group("shuffled", &data, &cfg).unwrap();
    assert!((report.full_accuracy - 0.125).abs() < 0.05, "{}", report.full_accuracy);
}

#[test]
fn overlap_cases() {
    let strengths = [0.1, 0.9, 0.2, 0.8, 0.05, 0.3, 0.0, 0.4, 0.01, 0.02];
    assert_eq!(top_units(&strengths, 0.2), vec![1, 3]);
    assert_eq!(top_weight_overlap(&[3, 1], &strengths, 0.2), 1.0);
    assert_eq!(top_weight_overlap(&[0, 2], &strengths, 0.2), 0.0);
    assert_eq!(top_weight_overlap(&[1, 2], &strengths, 0.2), 0.5);
    assert_eq!(top_units(&vec![1.0; 512], 0.05).len(), 26);
}

#[test]
fn strength_reflects_incident_weights() {
    let mut m = Seq2SeqModel::empty(ModelConfig::small(4, 6), Mode::Baseline);
    for (_, p) in m.params.iter_mut() {
        p.value.fill(1.0);
    }
    for layer in Layer::BOTH {
        let s = NeuronStrength::compute(&m, layer);
        assert_eq!(s.values.len(), 6);
        assert!(s.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
    let w = m.param_mut("encoder.gru.W_hz").unwrap();
    for r in 0..6 {
        w.set(r, 4, 9.0);
    }
    let s = NeuronStrength::compute(&m, Layer::Encoder);
    assert!(s.values[4] > s.values[0]);
    assert_eq!(top_units(&s.values, 0.1), vec![4]);
}

#[test]
fn probe_suite_runs_on_tiny_model() {
    let bundle = DatasetBundle::generate(4, SplitConfig::default());
    let m = tiny_model(10);
    let traces = capture_traces(&m, &bundle).test_only();
    let cfg = ProbeConfig { max_iterations: 200, ..ProbeConfig::default() };
    let suite = probe_suite(&m, &traces, &cfg, 0.05).unwrap();
    for r in [&suite.table, &suite.timestep, &suite.update_gate, &suite.reset_gate] {
        assert!(r.group_size >= 1 && r.group_size <= 6);
        assert!(r.group_accuracy >= 0.95 * r.full_accuracy);
        assert!(r.top_weight_overlap.is_some());
    }
    assert_eq!(suite.timestep.n_classes, 3);
}
