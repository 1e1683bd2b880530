use super::*;
use crate::numcore::Rng;
use crate::seq2seq::ModelConfig;
use crate::taskgen::SplitConfig;

fn small(mode: Mode, seed: u64) -> Seq2SeqModel {
    let mut rng = Rng::seeded(seed);
    let mut m = Seq2SeqModel::new(ModelConfig { init_scale: 0.5, ..ModelConfig::small(4, 8) }, mode, &mut rng);
    for (_, p) in m.params.iter_mut() {
        if is_bias_name(&p.name) {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
        }
    }
    m
}

fn is_bias_name(name: &str) -> bool {
    crate::seq2seq::is_bias(name)
}

fn short_bundle(seed: u64, n: usize) -> DatasetBundle {
    let mut b = DatasetBundle::generate(seed, SplitConfig::default());
    b.train.truncate(n);
    b
}

fn quick(epochs: usize) -> TrainingConfig {
    TrainingConfig { max_epochs: epochs, batch_size: 4, validation_fraction: 0.0, ..TrainingConfig::default() }
}

#[test]
fn component_tags_round_trip() {
    for k in ComponentKind::ALL {
        assert_eq!(ComponentKind::parse(k.tag()), Some(k));
    }
    assert_eq!(ComponentKind::parse("Decoder_Whh"), Some(ComponentKind::DecoderWhh));
    assert_eq!(ComponentKind::parse("attention"), None);
}

#[test]
fn weight_bundles_hold_three_matrices_and_no_biases() {
    let m = small(Mode::Guided, 1);
    for k in [ComponentKind::EncoderWih, ComponentKind::EncoderWhh, ComponentKind::DecoderWih, ComponentKind::DecoderWhh] {
        let c = extract_component(&m, k);
        assert_eq!(c.tensors.len(), 3, "{k}");
        assert!(c.tensors.iter().all(|(n, _)| !is_bias_name(n)), "{k}");
    }
    let enc = extract_component(&m, ComponentKind::Encoder);
    let dec = extract_component(&m, ComponentKind::Decoder);
    assert_eq!(enc.tensors.len() + dec.tensors.len(), m.params.len());
    assert!(dec.tensors.iter().any(|(n, _)| n.starts_with("decoder.attention")));
}

#[test]
fn implant_rejects_shape_mismatch() {
    let mut host = small(Mode::Guided, 1);
    let donor = Seq2SeqModel::new(ModelConfig::small(4, 6), Mode::Baseline, &mut Rng::seeded(2));
    let before = host.params.clone();
    let err = implant_component(&mut host, &extract_component(&donor, ComponentKind::DecoderWhh), true);
    assert!(matches!(err, Err(AblateError::Mismatch(_))));
    assert_eq!(host.params, before);
}

#[test]
fn implanted_component_stays_bit_identical_through_retraining() {
    let host = small(Mode::Guided, 1);
    let donor = small(Mode::Baseline, 2);
    let bundle = short_bundle(1, 24);
    let (outcome, record) = substitute_and_retrain(&host, &donor, ComponentKind::DecoderWhh, &bundle, &quick(2)).unwrap();
    for (name, value) in extract_component(&donor, ComponentKind::DecoderWhh).tensors {
        assert_eq!(outcome.model.param(&name).unwrap(), &value, "{name}");
    }
    assert_ne!(outcome.model.param("decoder.gru.W_iz").unwrap(), host.param("decoder.gru.W_iz").unwrap());
    assert_eq!(record.host_mode, Mode::Guided);
    assert_eq!(record.accuracies.len(), 5);
}

#[test]
fn prune_fraction_bounds() {
    let m = small(Mode::Guided, 1);
    assert!(matches!(PruneMask::from_strengths(&m, 0.0, false), Err(AblateError::Config(_))));
    assert!(PruneMask::from_strengths(&m, 1.5, true).is_err());
    let forced = PruneMask::from_strengths(&m, 0.0, true).unwrap();
    assert_eq!(forced.kept(Layer::Encoder), 0);
    let mask = PruneMask::from_strengths(&m, 0.3, false).unwrap();
    assert_eq!(mask.kept(Layer::Encoder), 3);
    assert_eq!(mask.kept(Layer::Decoder), 3);
    let (same, _) = prune_model(&m, 1.0, false).unwrap();
    assert_eq!(same.params, m.params);
}

#[test]
fn pruned_encoder_units_are_silent() {
    let m = small(Mode::Guided, 3);
    let (pruned, mask) = prune_model(&m, 0.25, false).unwrap();
    let removed: Vec<usize> = mask.keep[&Layer::Encoder].iter().enumerate().filter(|(_, &k)| !k).map(|(j, _)| j).collect();
    assert_eq!(removed.len(), 6);
    for step in pruned.encode_tokens(&[3, 9, 12]).unwrap() {
        for &j in &removed {
            assert_eq!(step.h.get(0, j), 0.0);
        }
    }
}

#[test]
fn masked_retraining_keeps_pruned_weights_at_zero() {
    let m = small(Mode::Guided, 4);
    let (pruned, mask) = prune_model(&m, 0.25, false).unwrap();
    let entries = mask.masked_entries(&pruned);
    assert!(!entries.is_empty());
    let outcome = retrain_pruned(pruned.clone(), &mask, &short_bundle(2, 24), &quick(2)).unwrap();
    for (id, idx) in &entries {
        let data = outcome.model.params.get(*id).value.data();
        assert!(idx.iter().all(|&i| data[i].to_bits() == 0), "{}", outcome.model.params.get(*id).name);
    }
    assert_ne!(outcome.model.params, pruned.params);
}

#[test]
fn mean_sd_matches_hand_values() {
    let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
    assert_eq!(m, 2.0);
    assert!((s - 1.0).abs() < 1e-12);
    assert_eq!(mean_sd(&[0.5]), (0.5, 0.0));
    assert!(mean_sd(&[]).0.is_nan());
}

#[test]
fn swap_table_layout() {
    let rec = |mode, kind, nc: f64| SwapRecord {
        host_mode: mode,
        component: kind,
        seed: 1,
        accuracies: [("nc".to_string(), nc)].into_iter().collect(),
        best_epoch: 1,
        error: None,
    };
    let records = vec![rec(Mode::Guided, ComponentKind::DecoderWhh, 0.8), rec(Mode::Guided, ComponentKind::DecoderWhh, 0.6), rec(Mode::Baseline, ComponentKind::Encoder, 0.1)];
    let unswapped = [(Mode::Guided, vec![0.7]), (Mode::Baseline, vec![0.0])].into_iter().collect();
    let csv = swap_table_csv(&records, &unswapped);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "component,AG host,baseline host");
    assert_eq!(lines[1], "-,0.700 ± 0.000,0.000 ± 0.000");
    assert_eq!(lines[2], "encoder,,0.100 ± 0.000");
    assert_eq!(lines[3], "decoder-whh,0.700 ± 0.141,");
}
