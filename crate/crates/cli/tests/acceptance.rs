//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 1-8 read the summary of a `reproduce` run with
//! `acceptance.json`. The run is cached under `target/acceptance` (or
//! `$ATTNGUIDE_ACCEPTANCE_DIR`) and reused while its config hash matches;
//! otherwise it is recomputed (about 70 minutes on one core in release
//! mode). Criterion 9 needs no training.
//!
//! Criteria 1-8 are statistical and only reported; set
//! `ATTNGUIDE_ACCEPTANCE_STRICT=1` to make any failure fail the test.
//! Criterion 9 always has to pass.

use std::collections::BTreeMap;
use std::path::PathBuf;

use attnguide::ablate::{extract_component, implant_component, ComponentKind};
use attnguide::analysis::{capture, connectivity_graph, gate_saturation, Signal};
use attnguide::numcore::{grad_check, softmax, ParamSet, Rng, Tape};
use attnguide::seq2seq::{ag_loss, attention_targets, load_checkpoint, save_checkpoint, Decoding, Layer, Mode, ModelConfig, Seq2SeqModel};
use attnguide::taskgen::{DatasetBundle, Split, SplitConfig};
use attnguide_cli::commands::{read_summary, reproduce};
use attnguide_cli::config::ExperimentConfig;
use attnguide_cli::report::ReproduceSummary;

// Criterion 1
const AG_HC_HI_MIN: f64 = 0.98;
const AG_HT_MIN: f64 = 0.85;
const AG_NC_MIN: f64 = 0.65;
const BL_HC_HI_MAX: f64 = 0.35;
const BL_HT_MAX: f64 = 0.10;
const BL_NC_MAX: f64 = 0.10;
// Criteria 2 and 3
const AG_PROBE_ACC_MIN: f64 = 0.98;
const AG_TIMESTEP_ACC_MIN: f64 = 0.999;
const AG_GROUP_MAX: f64 = 5.0;
const BL_GROUP_MIN: f64 = 20.0;
const AG_GATE_ACC_MIN: f64 = 0.90;
const BL_GATE_ACC_MAX: f64 = 0.60;
// Criterion 4
const OVERLAP_MIN: f64 = 0.8;
// Criterion 5
const SATURATION_RATIO_MIN: f64 = 2.0;
// Criterion 6
const SWAP_DECODER_MAX: f64 = 0.3;
const SWAP_ENCODER_MAX: f64 = 0.35;
const SWAP_DECODER_WHH_MIN: f64 = 0.8;
const SWAP_BASELINE_HOST_MAX: f64 = 0.10;
// Criterion 7
const PRUNED_NC_MAX: f64 = 0.35;
const RETRAINED_NC_MIN: f64 = 0.8;
// Criterion 8
const KEPT_TARGET: f64 = 0.01;
const KEPT_TOLERANCE: f64 = 0.005;
// Criterion 9
const GRAD_REL_ERR_MAX: f64 = 1e-4;

struct Line {
    id: usize,
    pass: bool,
    text: String,
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(" "))
}

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn acceptance_summary() -> ReproduceSummary {
    let cfg_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("acceptance.json");
    let cfg = ExperimentConfig::load(&cfg_path).expect("acceptance config");
    let dir = std::env::var_os("ATTNGUIDE_ACCEPTANCE_DIR").map(PathBuf::from).unwrap_or_else(|| workspace_root().join("target/acceptance"));
    if let Ok(s) = read_summary(&dir) {
        if s.config_hash == cfg.hash() {
            eprintln!("reusing acceptance run in {}", dir.display());
            return s;
        }
        eprintln!("acceptance run in {} has a different config; recomputing", dir.display());
    }
    reproduce(&cfg, &dir).expect("acceptance reproduce run")
}

fn criterion_1(s: &ReproduceSummary) -> Line {
    let acc = |m, sp| s.accuracies(m, sp);
    let (ag, bl) = (Mode::Guided, Mode::Baseline);
    let checks = [
        ("AG hc", acc(ag, "hc"), median(&acc(ag, "hc")) >= AG_HC_HI_MIN),
        ("AG hi", acc(ag, "hi"), median(&acc(ag, "hi")) >= AG_HC_HI_MIN),
        ("AG ht", acc(ag, "ht"), median(&acc(ag, "ht")) >= AG_HT_MIN),
        ("AG nc", acc(ag, "nc"), median(&acc(ag, "nc")) >= AG_NC_MIN),
        ("BL hc", acc(bl, "hc"), median(&acc(bl, "hc")) <= BL_HC_HI_MAX),
        ("BL hi", acc(bl, "hi"), median(&acc(bl, "hi")) <= BL_HC_HI_MAX),
        ("BL ht", acc(bl, "ht"), median(&acc(bl, "ht")) <= BL_HT_MAX),
        ("BL nc", acc(bl, "nc"), median(&acc(bl, "nc")) <= BL_NC_MAX),
    ];
    let text = checks.iter().map(|(n, v, ok)| format!("{n} {}{}", fmt(v), if *ok { "" } else { "!" })).collect::<Vec<_>>().join("; ");
    Line { id: 1, pass: checks.iter().all(|c| c.2), text: format!("generalization gap (per seed, ! = median misses): {text}") }
}

fn probe_values(s: &ReproduceSummary, mode: Mode, task: &str) -> (Vec<f64>, Vec<f64>) {
    let r = s.probe(mode, task);
    (r.iter().map(|p| p.full_accuracy).collect(), r.iter().map(|p| p.group_size as f64).collect())
}

fn criterion_2(s: &ReproduceSummary) -> Line {
    let (ag_acc, ag_group) = probe_values(s, Mode::Guided, "encoder-hidden/table");
    let (_, bl_group) = probe_values(s, Mode::Baseline, "encoder-hidden/table");
    let (ag_gate, _) = probe_values(s, Mode::Guided, "decoder-update/table");
    let (bl_gate, _) = probe_values(s, Mode::Baseline, "decoder-update/table");
    let pass = median(&ag_acc) >= AG_PROBE_ACC_MIN
        && median(&ag_group) <= AG_GROUP_MAX
        && median(&bl_group) >= BL_GROUP_MIN
        && median(&ag_gate) >= AG_GATE_ACC_MIN
        && median(&bl_gate) <= BL_GATE_ACC_MAX;
    Line {
        id: 2,
        pass,
        text: format!(
            "table probe: AG acc {} group {}; BL group {}; update-gate probe AG {} BL {}",
            fmt(&ag_acc),
            fmt(&ag_group),
            fmt(&bl_group),
            fmt(&ag_gate),
            fmt(&bl_gate)
        ),
    }
}

fn criterion_3(s: &ReproduceSummary) -> Line {
    let (ag_acc, ag_group) = probe_values(s, Mode::Guided, "encoder-hidden/timestep");
    let (bl_acc, bl_group) = probe_values(s, Mode::Baseline, "encoder-hidden/timestep");
    let pass = median(&ag_acc) >= AG_TIMESTEP_ACC_MIN && median(&ag_group) <= AG_GROUP_MAX && median(&bl_group) >= BL_GROUP_MIN;
    Line {
        id: 3,
        pass,
        text: format!("timestep probe: AG acc {} group {}; BL acc {} group {}", fmt(&ag_acc), fmt(&ag_group), fmt(&bl_acc), fmt(&bl_group)),
    }
}

fn criterion_4(s: &ReproduceSummary) -> Line {
    let tasks = ["encoder-hidden/table", "encoder-hidden/timestep", "decoder-update/table"];
    let v: Vec<f64> = tasks.iter().flat_map(|t| s.probe(Mode::Guided, t)).filter_map(|r| r.top_weight_overlap).collect();
    let m = if v.is_empty() { f64::NAN } else { mean(&v) };
    Line { id: 4, pass: m >= OVERLAP_MIN, text: format!("AG group overlap with top-5% strength units: mean {m:.3} over {}", fmt(&v)) }
}

fn criterion_5(s: &ReproduceSummary) -> Line {
    let share = |mode| -> Vec<f64> {
        s.saturation.iter().filter(|r| r.mode == mode && r.layer == "decoder" && r.gate == "update").map(|r| r.right_share).collect()
    };
    let (ag, bl) = (share(Mode::Guided), share(Mode::Baseline));
    let (ma, mb) = (median(&ag), median(&bl));
    let pass = ma > 0.0 && ma >= SATURATION_RATIO_MIN * mb;
    Line { id: 5, pass, text: format!("decoder update gates right-saturated >= half the time: AG {} vs BL {} (medians {ma:.3} vs {mb:.3})", fmt(&ag), fmt(&bl)) }
}

fn swap_nc(s: &ReproduceSummary, host: Mode, kind: ComponentKind) -> Vec<f64> {
    s.swaps.iter().filter(|r| r.host_mode == host && r.component == kind).map(|r| r.accuracies.get("nc").copied().unwrap_or(f64::NAN)).collect()
}

fn criterion_6(s: &ReproduceSummary) -> Line {
    let ag = |k| swap_nc(s, Mode::Guided, k);
    let unswapped = mean(&s.accuracies(Mode::Guided, "nc"));
    let (dec, enc, whh, wih) = (ag(ComponentKind::Decoder), ag(ComponentKind::Encoder), ag(ComponentKind::DecoderWhh), ag(ComponentKind::EncoderWih));
    let bl_cells: Vec<(ComponentKind, f64)> =
        ComponentKind::ALL.iter().map(|&k| (k, swap_nc(s, Mode::Baseline, k))).filter(|(_, v)| !v.is_empty()).map(|(k, v)| (k, mean(&v))).collect();
    let bl_max = bl_cells.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let pass = !dec.is_empty()
        && mean(&dec) <= SWAP_DECODER_MAX
        && mean(&enc) <= SWAP_ENCODER_MAX
        && mean(&whh) >= SWAP_DECODER_WHH_MIN
        && mean(&wih) >= unswapped
        && !bl_cells.is_empty()
        && bl_max <= SWAP_BASELINE_HOST_MAX;
    let bl_text: Vec<String> = bl_cells.iter().map(|(k, v)| format!("{k} {v:.3}")).collect();
    Line {
        id: 6,
        pass,
        text: format!(
            "substitution NC: AG+BL decoder {} encoder {} decoder-whh {} encoder-wih {} vs AG unswapped {unswapped:.3}; BL hosts {}",
            fmt(&dec),
            fmt(&enc),
            fmt(&whh),
            fmt(&wih),
            bl_text.join(", ")
        ),
    }
}

fn criterion_7(s: &ReproduceSummary) -> Line {
    let nc = |m: &BTreeMap<String, f64>| m.get("nc").copied().unwrap_or(f64::NAN);
    let pruned: Vec<f64> = s.prunes.iter().map(|p| nc(&p.pruned)).collect();
    let retrained: Vec<f64> = s.prunes.iter().map(|p| nc(&p.retrained)).collect();
    let intact = !s.prunes.is_empty() && s.prunes.iter().all(|p| p.mask_intact);
    let pass = intact && median(&pruned) < PRUNED_NC_MAX && median(&retrained) >= RETRAINED_NC_MIN;
    Line { id: 7, pass, text: format!("pruning to 5%: NC pruned {} retrained {}; mask bit-exact {intact}", fmt(&pruned), fmt(&retrained)) }
}

fn criterion_8(s: &ReproduceSummary) -> Line {
    let mut parts = Vec::new();
    let mut pass = true;
    for (tensor, threshold) in [("encoder.gru.W_hz", 0.2), ("decoder.gru.W_iz", 0.17)] {
        let per_mode: Vec<f64> = [Mode::Guided, Mode::Baseline]
            .iter()
            .map(|&m| {
                let v: Vec<f64> = s.graphs.iter().filter(|g| g.mode == m && g.tensor == tensor && g.threshold == threshold).map(|g| g.kept_fraction).collect();
                mean(&v)
            })
            .collect();
        let avg = mean(&per_mode);
        pass &= (avg - KEPT_TARGET).abs() <= KEPT_TOLERANCE;
        parts.push(format!("{tensor} @ {threshold}: AG {:.4} BL {:.4} mean {avg:.4}", per_mode[0], per_mode[1]));
    }
    Line { id: 8, pass, text: format!("kept-edge fraction (target 0.01 +- 0.005): {}", parts.join("; ")) }
}

fn property_suite() -> Result<String, String> {
    let mut notes = Vec::new();
    // Gradient check on the shrunken model.
    let cfg = ModelConfig { init_scale: 0.5, ..ModelConfig::small(4, 4) };
    let bundle = DatasetBundle::generate(1, SplitConfig::default());
    let batch: Vec<_> = bundle.train.iter().filter(|e| e.input.len() == 3).take(2).collect();
    for mode in [Mode::Guided, Mode::Baseline] {
        let mut model = Seq2SeqModel::new(cfg, mode, &mut Rng::seeded(7));
        let mut rng = Rng::seeded(8);
        for (_, p) in model.params.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| {
                if *v == 0.0 {
                    *v = rng.uniform(-0.5, 0.5)
                }
            });
        }
        let weight = if mode == Mode::Guided { 1.0 } else { 0.0 };
        let loss_of = |params: &ParamSet| {
            let m = Seq2SeqModel { params: params.clone(), ..model.clone() };
            let mut tape = Tape::new(params);
            let fwd = m.forward(&mut tape, &batch, Decoding::TeacherForced);
            let loss = m.loss(&mut tape, &fwd, &batch, weight);
            (tape.scalar(loss.total), tape.backward(loss.total).expect("backward"))
        };
        let (_, grads) = loss_of(&model.params);
        let mut params = model.params.clone();
        let report = grad_check(&mut params, &grads, |p| loss_of(p).0, &[], 1e-5, usize::MAX, &mut Rng::seeded(9));
        if report.max_rel_error >= GRAD_REL_ERR_MAX {
            return Err(format!("{mode} gradient rel. error {:.2e} at {:?}", report.max_rel_error, report.worst));
        }
        notes.push(format!("grad {mode} {:.1e} over {} entries", report.max_rel_error, report.checked));
    }
    // Split counts for several dataset seeds.
    for seed in 1..=5 {
        let b = DatasetBundle::generate(seed, SplitConfig::default());
        let counts: Vec<usize> = Split::ALL.iter().map(|&s| b.split(s).len()).collect();
        if counts != [232, 56, 64, 192, 32] {
            return Err(format!("seed {seed} split counts {counts:?}"));
        }
    }
    notes.push("splits 232/56/64/192/32".into());
    // AG loss is zero on a one-hot diagonal.
    let t = attention_targets(&[0, 1, 2, 2], 3);
    if ag_loss(&t, &t).map_err(|e| e.to_string())? != 0.0 {
        return Err("AG loss on one-hot diagonal is not zero".into());
    }
    // Softmax sums to one.
    let p = softmax(&[1000.0, -3.0, 2.5]);
    if (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err("softmax does not sum to 1".into());
    }
    // Saturation bounds and doubling invariance.
    let model = Seq2SeqModel::new(cfg, Mode::Guided, &mut Rng::seeded(3));
    let ex: Vec<_> = bundle.heldout_inputs.iter().enumerate().map(|(i, e)| (Split::HeldoutInputs, i, e)).collect();
    let traces = capture(&model, &ex);
    let sat = gate_saturation(&traces, Layer::Decoder, Signal::Update, 0.1, 0.9).map_err(|e| e.to_string())?;
    if sat.left.iter().zip(&sat.right).any(|(l, r)| l + r > 1.0 + 1e-12) {
        return Err("saturation left + right exceeds 1".into());
    }
    let doubled: Vec<_> = ex.iter().chain(ex.iter()).cloned().collect();
    let sat2 = gate_saturation(&capture(&model, &doubled), Layer::Decoder, Signal::Update, 0.1, 0.9).map_err(|e| e.to_string())?;
    if sat2.left != sat.left || sat2.right != sat.right {
        return Err("saturation changes when the data is doubled".into());
    }
    // Graph edges shrink as the threshold grows.
    let w = model.param("encoder.gru.W_hz").expect("tensor");
    let sizes: Vec<usize> = [0.0, 0.1, 0.2, 0.4].iter().map(|&t| connectivity_graph("w", w, t).expect("graph").edges.len()).collect();
    if sizes.windows(2).any(|p| p[1] > p[0]) {
        return Err(format!("graph edges not monotone in threshold: {sizes:?}"));
    }
    // Checkpoint round trip.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.json");
    save_checkpoint(&model, &path, None).map_err(|e| e.to_string())?;
    let (back, _) = load_checkpoint(&path).map_err(|e| e.to_string())?;
    if back.params != model.params {
        return Err("checkpoint round trip changed parameters".into());
    }
    // Swapping a model's own component in is a no-op.
    let mut same = model.clone();
    for kind in ComponentKind::ALL {
        implant_component(&mut same, &extract_component(&model, kind), false).map_err(|e| e.to_string())?;
    }
    if same.params != model.params {
        return Err("identity swap changed parameters".into());
    }
    // Determinism under fixed seeds.
    let a = Seq2SeqModel::new(cfg, Mode::Guided, &mut Rng::named(5, "init"));
    let b = Seq2SeqModel::new(cfg, Mode::Guided, &mut Rng::named(5, "init"));
    if a.params != b.params || DatasetBundle::generate(4, SplitConfig::default()) != DatasetBundle::generate(4, SplitConfig::default()) {
        return Err("seeded construction is not deterministic".into());
    }
    notes.push("ag-loss, softmax, saturation, graph, checkpoint, identity swap, determinism ok".into());
    Ok(notes.join("; "))
}

fn main() {
    let property = property_suite();
    let c9 = Line { id: 9, pass: property.is_ok(), text: format!("property suite: {}", property.clone().unwrap_or_else(|e| e)) };
    let summary = acceptance_summary();
    let seeds = summary.config.seeds.len();
    let mut lines = vec![
        criterion_1(&summary),
        criterion_2(&summary),
        criterion_3(&summary),
        criterion_4(&summary),
        criterion_5(&summary),
        criterion_6(&summary),
        criterion_7(&summary),
        criterion_8(&summary),
    ];
    lines.push(c9);
    println!("acceptance over {seeds} seeds per mode (config {})", &summary.config_hash[..12]);
    for l in &lines {
        println!("criterion {} {}: {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.text);
    }
    let strict = std::env::var("ATTNGUIDE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let failed: Vec<usize> = lines.iter().filter(|l| !l.pass && (strict || l.id == 9)).map(|l| l.id).collect();
    if !failed.is_empty() {
        eprintln!("acceptance failed: criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance ok{}", if strict { "" } else { " (criteria 1-8 reported only)" });
}
