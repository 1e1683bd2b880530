//! End-to-end runs of the `attnguide` binary on a tiny model.

use std::path::Path;
use std::process::{Command, Output};

use attnguide::seq2seq::{load_checkpoint, ModelConfig};
use attnguide_cli::config::ExperimentConfig;
use attnguide_cli::manifest::{read_manifest, verify_manifest};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnguide")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) {
    let mut cfg = ExperimentConfig::default();
    cfg.model = ModelConfig::small(4, 6);
    cfg.training.max_epochs = 2;
    cfg.seeds = vec![1];
    std::fs::write(dir.join("tiny.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
}

#[test]
fn train_eval_trace_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_config(d);
    ok(&["gen-data", "--seed", "3", "--out", "data"], d);
    for f in ["dataset.json", "train.tsv", "heldout_inputs.tsv", "heldout_compositions.tsv", "heldout_tables.tsv", "new_compositions.tsv"] {
        assert!(d.join("data").join(f).is_file(), "missing {f}");
    }
    assert_eq!(std::fs::read_to_string(d.join("data/train.tsv")).unwrap().lines().count(), 232);

    let train = ok(&["train", "--config", "tiny.json", "--mode", "ag", "--seed", "2", "--data", "data", "--out", "ag"], d);
    assert!(train.contains("best epoch"));
    let (model, _) = load_checkpoint(&d.join("ag/model.json")).unwrap();
    assert_eq!(model.config.hidden, 6);
    let m = read_manifest(&d.join("ag")).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.seed, Some(2));
    assert!(m.artifacts.contains_key("model.bin"));
    assert!(verify_manifest(&d.join("ag")).unwrap().is_empty());

    let eval = ok(&["eval", "--checkpoint", "ag", "--data", "data", "--split", "hi,nc"], d);
    assert_eq!(eval.lines().count(), 2);
    ok(&["trace", "--checkpoint", "ag", "--data", "data", "--out", "traces"], d);
    ok(&["analyze", "--what", "saturation", "--traces", "traces", "--out", "sat"], d);
    assert!(d.join("sat/saturation.svg").is_file());

    // A tampered artifact is reported by the manifest check.
    std::fs::write(d.join("ag/history.json"), "[]").unwrap();
    assert_eq!(verify_manifest(&d.join("ag")).unwrap(), vec!["history.json".to_string()]);
}

#[test]
fn bad_input_exits_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["gen-data", "--out", "data"], d);
    assert_eq!(run(&["train", "--mode", "neither", "--data", "data"], d).status.code(), Some(1));
    assert_eq!(run(&["eval", "--checkpoint", "missing", "--data", "data"], d).status.code(), Some(1));
    std::fs::write(d.join("bad.json"), r#"{"schema_version": 99}"#).unwrap();
    assert_eq!(run(&["reproduce", "--config", "bad.json"], d).status.code(), Some(1));
}

#[test]
fn default_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&["default-config"], tmp.path());
    let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    cfg.validate().unwrap();
}
