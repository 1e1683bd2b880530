//! Prints per-split accuracy every few epochs of a manual training loop.
//! Usage: curve_probe <mode> <batch> <epochs> <hidden> <seed> <lr> <every>
//!   [pre|post|ff|comb] [embedding std, 0 for uniform] [fan]
use attnguide::numcore::{AdamConfig, AdamState, Rng};
use attnguide::seq2seq::{batch_gradients, evaluate, AttentionPlacement, Mode, ModelConfig, Seq2SeqModel};
use attnguide::numcore::Tape;
use attnguide::seq2seq::Decoding;
use attnguide::taskgen::{DatasetBundle, Example, Split, SplitConfig};

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let mode = Mode::parse(&a[1]).unwrap();
    let (batch, epochs, hidden, seed): (usize, usize, usize, u64) =
        (a[2].parse().unwrap(), a[3].parse().unwrap(), a[4].parse().unwrap(), a[5].parse().unwrap());
    let lr: f64 = a[6].parse().unwrap();
    let every: usize = a[7].parse().unwrap();
    let bundle = DatasetBundle::generate(seed, SplitConfig::default());
    let placement = match a.get(8).map(String::as_str) {
        Some("pre") => AttentionPlacement::PreRnn,
        Some("post") => AttentionPlacement::PostRnn,
        Some("comb") => AttentionPlacement::PostRnnCombine,
        _ => AttentionPlacement::FullFocus,
    };
    let embed_std = a.get(9).map(|v| v.parse::<f64>().unwrap()).filter(|&v| v > 0.0);
    let fan_in_init = a.get(10).is_some_and(|v| v == "fan");
    let cfg = ModelConfig { hidden, attn_dim: hidden, placement, embed_std, fan_in_init, ..ModelConfig::default() };
    let mut model = Seq2SeqModel::new(cfg, mode, &mut Rng::named(seed, "init"));
    let w = if mode == Mode::Guided { 1.0 } else { 0.0 };
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(lr));
    let mut rng = Rng::named(seed, "batches");
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<&Example>> = Default::default();
    for e in &bundle.train {
        groups.entry((e.input.len(), e.target.len())).or_default().push(e);
    }
    for ep in 1..=epochs {
        let mut batches = Vec::new();
        for g in groups.values() {
            let mut g = g.clone();
            rng.shuffle(&mut g);
            batches.extend(g.chunks(batch).map(<[_]>::to_vec));
        }
        rng.shuffle(&mut batches);
        let mut loss = 0.0;
        for b in &batches {
            let (l, _, _, g) = batch_gradients(&model, b, w).unwrap();
            loss += l * b.len() as f64;
            adam.step(&mut model.params, &g).unwrap();
        }
        if ep % every == 0 {
            let accs: Vec<String> = Split::ALL.iter().map(|&s| format!("{}={:.2}", s, evaluate(&model, bundle.split(s)))).collect();
            println!("ep {ep:3} loss {:.4} {}", loss / bundle.train.len() as f64, accs.join(" "));
        }
    }
    for split in [Split::HeldoutInputs, Split::NewCompositions] {
        let exs: Vec<&Example> = bundle.split(split).iter().collect();
        let mut bad_step = vec![0usize; 8];
        for e in &exs {
            let mut tape = Tape::new(&model.params);
            let f = model.forward(&mut tape, &[*e], Decoding::TeacherForced);
            let t = e.target_indices();
            for (k, p) in f.predictions[0].iter().enumerate() {
                if *p != t[k] { bad_step[k] += 1; }
            }
        }
        println!("{split}: teacher-forced wrong per step {:?}", bad_step);
        for e in exs.iter().take(4) {
            let mut tape = Tape::new(&model.params);
            let f = model.forward(&mut tape, &[*e], Decoding::Greedy);
            println!("  {} | {} | pred {:?} tgt {:?}", e.source_string(), e.target.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "), f.predictions[0], e.target_indices());
        }
    }
}
