//! One function per subcommand. Each writes only below its output
//! directory and finishes with a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use attnguide::ablate::{self, ComponentKind, PruneMask, SwapRecord};
use attnguide::analysis::{
    self, activation_distributions, capture_traces, connectivity_graph, distributions_csv, distributions_svg, functional_group, gate_probe_data,
    gate_saturation, heatmap_csv, heatmap_svg, read_traces, saturation_svg, table_probe_data, timestep_probe_data, top_weight_overlap,
    write_traces, NeuronStrength, ProbeData, ProbeReport, Signal, TraceSet,
};
use attnguide::numcore::Rng;
use attnguide::seq2seq::{evaluate, load_checkpoint, save_checkpoint, Layer, Mode, Seq2SeqModel};
use attnguide::taskgen::{read_dataset, write_dataset, DatasetBundle, Split, SplitConfig};
use attnguide::util::write_atomic;

use crate::config::{AnalysisSettings, ExperimentConfig};
use crate::manifest::write_manifest;
use crate::report::{
    accuracy_summary_csv, per_seed_csv, graphs_csv, probes_csv, pruning_csv, saturation_csv, substitution_csv, GraphRecord, ModelRecord, ProbeRecord,
    PruneRecord, ReproduceSummary, SaturationRecord,
};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "model.json";
pub const SUMMARY_FILE: &str = "summary.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Accepts a checkpoint file or a directory holding `model.json`.
pub fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn load_model(p: &Path) -> Result<Seq2SeqModel, CliError> {
    let path = checkpoint_path(p);
    load_checkpoint(&path).map(|(m, _)| m).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_data(dir: &Path) -> Result<DatasetBundle, CliError> {
    read_dataset(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn hash_of<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable")))
}

pub fn split_accuracies(model: &Seq2SeqModel, bundle: &DatasetBundle, splits: &[Split]) -> BTreeMap<String, f64> {
    splits.iter().map(|&s| (s.short().to_string(), evaluate(model, bundle.split(s)))).collect()
}

pub fn gen_data(seed: u64, split: SplitConfig, out: &Path) -> Result<DatasetBundle, CliError> {
    let bundle = DatasetBundle::generate(seed, split);
    write_dataset(&bundle, out)?;
    write_manifest(out, "gen-data", &hash_of(&split), Some(seed))?;
    Ok(bundle)
}

/// Trains one model; writes the selected checkpoint, the epoch history
/// and split accuracies.
pub fn train_model(cfg: &ExperimentConfig, mode: Mode, seed: u64, data: &Path, out: &Path) -> Result<ModelRecord, CliError> {
    let bundle = load_data(data)?;
    let training = cfg.training_for(seed);
    let model = Seq2SeqModel::new(cfg.model, mode, &mut Rng::named(seed, "init"));
    let outcome = attnguide::seq2seq::train(model, &bundle, &training)?;
    fs::create_dir_all(out)?;
    save_checkpoint(&outcome.model, &out.join(CHECKPOINT_FILE), Some(&training))?;
    write_json(&out.join("history.json"), &outcome.history)?;
    let record = ModelRecord {
        mode,
        seed,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        accuracies: split_accuracies(&outcome.model, &bundle, &Split::ALL),
    };
    write_json(&out.join("accuracies.json"), &record)?;
    write_manifest(out, "train", &cfg.hash(), Some(seed))?;
    Ok(record)
}

pub fn eval_model(checkpoint: &Path, data: &Path, splits: &[Split], out: Option<&Path>) -> Result<BTreeMap<String, f64>, CliError> {
    let model = load_model(checkpoint)?;
    let bundle = load_data(data)?;
    let acc = split_accuracies(&model, &bundle, splits);
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_json(&out.join("accuracies.json"), &acc)?;
        write_manifest(out, "eval", &hash_of(&model.config), None)?;
    }
    Ok(acc)
}

pub fn trace_model(checkpoint: &Path, data: &Path, out: &Path) -> Result<TraceSet, CliError> {
    let model = load_model(checkpoint)?;
    let bundle = load_data(data)?;
    let set = capture_traces(&model, &bundle);
    write_traces(&set, out)?;
    write_manifest(out, "trace", &hash_of(&model.config), None)?;
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalyzeWhat {
    Heatmap,
    Graph,
    Saturation,
    Dists,
    ProbeTable,
    ProbeTimestep,
    ProbeGate,
}

impl AnalyzeWhat {
    pub const ALL: [AnalyzeWhat; 7] = [
        AnalyzeWhat::Heatmap,
        AnalyzeWhat::Graph,
        AnalyzeWhat::Saturation,
        AnalyzeWhat::Dists,
        AnalyzeWhat::ProbeTable,
        AnalyzeWhat::ProbeTimestep,
        AnalyzeWhat::ProbeGate,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AnalyzeWhat::Heatmap => "heatmap",
            AnalyzeWhat::Graph => "graph",
            AnalyzeWhat::Saturation => "saturation",
            AnalyzeWhat::Dists => "dists",
            AnalyzeWhat::ProbeTable => "probe-table",
            AnalyzeWhat::ProbeTimestep => "probe-timestep",
            AnalyzeWhat::ProbeGate => "probe-gate",
        }
    }

    pub fn parse(s: &str) -> Option<AnalyzeWhat> {
        Self::ALL.into_iter().find(|w| w.tag() == s)
    }

    fn needs_traces(self) -> bool {
        !matches!(self, AnalyzeWhat::Heatmap | AnalyzeWhat::Graph)
    }
}

/// Inputs of `analyze`. Weight analyses need a checkpoint; activation
/// analyses need traces, or a checkpoint plus data to capture them.
#[derive(Clone, Debug, Default)]
pub struct AnalyzeInputs {
    pub traces: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    /// Restricts heatmaps and graphs to one tensor.
    pub tensor: Option<String>,
    /// Overrides the configured graph threshold.
    pub threshold: Option<f64>,
}

/// What one analysis produced, for the run summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AnalyzeOutput {
    pub graphs: Vec<(String, f64, usize, f64)>,
    pub saturation: Vec<(String, String, usize, f64, f64)>,
    pub probes: Vec<ProbeReport>,
}

fn probe_with_overlap(task: &str, data: ProbeData, settings: &AnalysisSettings, strengths: Option<&NeuronStrength>) -> Result<ProbeReport, CliError> {
    let (_, mut report) = functional_group(task, &data, &settings.probe)?;
    report.top_weight_overlap = strengths.map(|s| top_weight_overlap(&report.group, &s.values, settings.top_frac));
    Ok(report)
}

pub fn analyze(what: AnalyzeWhat, inputs: &AnalyzeInputs, settings: &AnalysisSettings, out: &Path) -> Result<AnalyzeOutput, CliError> {
    let model = inputs.checkpoint.as_deref().map(load_model).transpose()?;
    let traces = if what.needs_traces() {
        Some(match (&inputs.traces, &model, &inputs.data) {
            (Some(dir), _, _) => read_traces(dir)?,
            (None, Some(m), Some(data)) => capture_traces(m, &load_data(data)?),
            _ => return Err(CliError::Input(format!("{} needs --traces or --checkpoint with --data", what.tag()))),
        })
    } else {
        None
    };
    let need_model = || model.as_ref().ok_or_else(|| CliError::Input(format!("{} needs --checkpoint", what.tag())));
    fs::create_dir_all(out)?;
    let mut result = AnalyzeOutput::default();
    match what {
        AnalyzeWhat::Heatmap => {
            let m = need_model()?;
            for (_, p) in m.params.iter() {
                let wanted = match &inputs.tensor {
                    Some(t) => *t == p.name,
                    None => settings.heatmaps.contains(&p.name),
                };
                if !wanted {
                    continue;
                }
                write_text(&out.join(format!("heatmap_{}.csv", p.name)), &heatmap_csv(&p.name, &p.value))?;
                write_text(&out.join(format!("heatmap_{}.svg", p.name)), &heatmap_svg(&p.name, &p.value))?;
            }
        }
        AnalyzeWhat::Graph => {
            let m = need_model()?;
            let targets: Vec<(String, f64)> = match &inputs.tensor {
                Some(t) => {
                    let fallback = settings.graphs.iter().find(|(n, _)| n == t).map(|(_, v)| *v);
                    let th = inputs.threshold.or(fallback).ok_or_else(|| CliError::Input(format!("no threshold for {t}; pass --threshold")))?;
                    vec![(t.clone(), th)]
                }
                None => settings.graphs.iter().map(|(n, v)| (n.clone(), inputs.threshold.unwrap_or(*v))).collect(),
            };
            for (name, th) in targets {
                let w = m.param(&name).ok_or_else(|| CliError::Input(format!("no tensor named {name}")))?;
                let g = connectivity_graph(&name, w, th)?;
                write_text(&out.join(format!("graph_{name}.dot")), &g.to_dot())?;
                result.graphs.push((name, th, g.edges.len(), g.kept_fraction));
            }
            write_json(&out.join("graphs.json"), &result.graphs)?;
        }
        AnalyzeWhat::Saturation => {
            let t = traces.as_ref().expect("traces loaded").test_only();
            let mut all = Vec::new();
            for layer in Layer::BOTH {
                for gate in [Signal::Update, Signal::Reset] {
                    let s = gate_saturation(&t, layer, gate, settings.saturation_lo, settings.saturation_hi)?;
                    let name = format!("{}_{}", layer.tag(), gate.tag());
                    write_text(&out.join(format!("saturation_{name}.csv")), &s.to_csv())?;
                    result.saturation.push((
                        layer.tag().to_string(),
                        gate.tag().to_string(),
                        s.left.len(),
                        s.right_saturated_share(settings.right_saturation_min),
                        s.left_saturated_share(settings.right_saturation_min),
                    ));
                    all.push((name, s));
                }
            }
            let refs: Vec<(&str, &analysis::SaturationStats)> = all.iter().map(|(n, s)| (n.as_str(), s)).collect();
            write_text(&out.join("saturation.svg"), &saturation_svg("gate saturation (test traces)", &refs))?;
            write_json(&out.join("saturation.json"), &result.saturation)?;
        }
        AnalyzeWhat::Dists => {
            let t = traces.as_ref().expect("traces loaded").test_only();
            let mut series = Vec::new();
            for layer in Layer::BOTH {
                let mut rng = Rng::named(settings.probe.seed, &format!("dists-{}", layer.tag()));
                let d = activation_distributions(&t, layer, settings.distribution_units, &mut rng)?;
                write_text(&out.join(format!("dists_{}.csv", layer.tag())), &distributions_csv(layer, &d))?;
                series.push((layer.tag(), d));
            }
            let refs: Vec<(&str, &[analysis::UnitDistribution])> = series.iter().map(|(n, d)| (*n, d.as_slice())).collect();
            write_text(&out.join("dists.svg"), &distributions_svg("hidden activation distributions", &refs))?;
        }
        AnalyzeWhat::ProbeTable | AnalyzeWhat::ProbeTimestep | AnalyzeWhat::ProbeGate => {
            let t = traces.as_ref().expect("traces loaded").test_only();
            let enc = model.as_ref().map(|m| NeuronStrength::compute(m, Layer::Encoder));
            let dec = model.as_ref().map(|m| NeuronStrength::compute(m, Layer::Decoder));
            let reports = match what {
                AnalyzeWhat::ProbeTable => vec![probe_with_overlap("encoder-hidden/table", table_probe_data(&t)?, settings, enc.as_ref())?],
                AnalyzeWhat::ProbeTimestep => vec![probe_with_overlap("encoder-hidden/timestep", timestep_probe_data(&t)?, settings, enc.as_ref())?],
                _ => vec![
                    probe_with_overlap("decoder-update/table", gate_probe_data(&t, Signal::Update)?, settings, dec.as_ref())?,
                    probe_with_overlap("decoder-reset/table", gate_probe_data(&t, Signal::Reset)?, settings, dec.as_ref())?,
                ],
            };
            write_json(&out.join(format!("{}.json", what.tag())), &reports)?;
            result.probes = reports;
        }
    }
    write_manifest(out, &format!("analyze {}", what.tag()), &hash_of(&(what.tag(), settings)), None)?;
    Ok(result)
}

/// Runs one substitution cell per `(component, seed)`. A diverged cell is
/// recorded with its error instead of aborting the batch.
pub fn swap(
    cfg: &ExperimentConfig,
    host: &Path,
    donor: &Path,
    components: &[ComponentKind],
    seeds: &[u64],
    data: &Path,
    out: &Path,
) -> Result<Vec<SwapRecord>, CliError> {
    let host_model = load_model(host)?;
    let donor_model = load_model(donor)?;
    let bundle = load_data(data)?;
    let jobs: Vec<(ComponentKind, u64)> = components.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    let records = jobs
        .par_iter()
        .map(|&(kind, seed)| -> Result<SwapRecord, CliError> {
            match ablate::substitute_and_retrain(&host_model, &donor_model, kind, &bundle, &cfg.swap_training(seed)) {
                Ok((_, rec)) => Ok(rec),
                Err(ablate::AblateError::Train(e @ attnguide::seq2seq::TrainError::Diverged { .. })) => Ok(SwapRecord {
                    host_mode: host_model.mode,
                    component: kind,
                    seed,
                    accuracies: BTreeMap::new(),
                    best_epoch: 0,
                    error: Some(e.to_string()),
                }),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(out)?;
    write_json(&out.join("swaps.json"), &records)?;
    write_manifest(out, "swap", &cfg.hash(), seeds.first().copied())?;
    Ok(records)
}

/// Masks all but the strongest units, scores the pruned model, retrains
/// it with the mask enforced and checks the mask survived.
pub fn prune(cfg: &ExperimentConfig, checkpoint: &Path, data: &Path, keep_frac: f64, force: bool, seed: u64, out: &Path) -> Result<PruneRecord, CliError> {
    let model = load_model(checkpoint)?;
    let bundle = load_data(data)?;
    let (pruned, mask) = ablate::prune_model(&model, keep_frac, force)?;
    let before = split_accuracies(&model, &bundle, &Split::ALL);
    let pruned_acc = split_accuracies(&pruned, &bundle, &Split::ALL);
    let training = cfg.prune_training(seed);
    let outcome = ablate::retrain_pruned(pruned.clone(), &mask, &bundle, &training)?;
    let mask_intact = mask_holds(&outcome.model, &mask);
    fs::create_dir_all(out)?;
    save_checkpoint(&pruned, &out.join("pruned.json"), None)?;
    save_checkpoint(&outcome.model, &out.join("retrained.json"), Some(&training))?;
    write_json(&out.join("mask.json"), &mask)?;
    let record = PruneRecord {
        seed,
        mode: model.mode,
        keep_frac,
        kept_units: Layer::BOTH.iter().map(|&l| (l.tag().to_string(), mask.kept(l))).collect(),
        before,
        pruned: pruned_acc,
        retrained: split_accuracies(&outcome.model, &bundle, &Split::ALL),
        retrain_best_epoch: outcome.best_epoch,
        mask_intact,
    };
    write_json(&out.join("prune.json"), &record)?;
    write_manifest(out, "prune", &cfg.hash(), Some(seed))?;
    Ok(record)
}

/// Every entry incident to a removed unit is exactly `+0.0`.
pub fn mask_holds(model: &Seq2SeqModel, mask: &PruneMask) -> bool {
    mask.masked_entries(model).iter().all(|(id, idx)| {
        let data = model.params.get(*id).value.data();
        idx.iter().all(|&i| data[i].to_bits() == 0)
    })
}

fn model_dir(out: &Path, mode: Mode, seed: u64) -> PathBuf {
    out.join("models").join(format!("{}-s{seed}", mode.tag()))
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// The whole pipeline: data, every model, traces and analyses, swap cells,
/// pruning, then the report tables. Equivalent to calling `gen-data`,
/// `train`, `trace`, `analyze`, `swap` and `prune` by hand with the same
/// config.
pub fn reproduce(cfg: &ExperimentConfig, out: &Path) -> Result<ReproduceSummary, CliError> {
    cfg.validate()?;
    with_pool(cfg.threads, || reproduce_inner(cfg, out))?
}

fn reproduce_inner(cfg: &ExperimentConfig, out: &Path) -> Result<ReproduceSummary, CliError> {
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let data = out.join("data");
    gen_data(cfg.data_seed, cfg.split, &data)?;

    let runs: Vec<(Mode, u64)> = cfg.mode.modes().into_iter().flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s))).collect();
    let models = runs
        .par_iter()
        .map(|&(mode, seed)| {
            let dir = model_dir(out, mode, seed);
            eprintln!("train {mode} seed {seed}");
            train_model(cfg, mode, seed, &data, &dir)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let analyses = runs
        .par_iter()
        .map(|&(mode, seed)| -> Result<(Mode, u64, Vec<AnalyzeOutput>), CliError> {
            let dir = model_dir(out, mode, seed);
            let traces = out.join("traces").join(format!("{}-s{seed}", mode.tag()));
            trace_model(&dir, &data, &traces)?;
            let inputs = AnalyzeInputs { traces: Some(traces), checkpoint: Some(dir), data: Some(data.clone()), ..AnalyzeInputs::default() };
            let adir = out.join("analysis").join(format!("{}-s{seed}", mode.tag()));
            let mut outputs = Vec::new();
            for what in AnalyzeWhat::ALL {
                let is_probe = matches!(what, AnalyzeWhat::ProbeTable | AnalyzeWhat::ProbeTimestep | AnalyzeWhat::ProbeGate);
                if is_probe && !cfg.analysis.probes {
                    continue;
                }
                eprintln!("analyze {} {mode} seed {seed}", what.tag());
                outputs.push(analyze(what, &inputs, &cfg.analysis, &adir.join(what.tag()))?);
            }
            Ok((mode, seed, outputs))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut probes = Vec::new();
    let mut saturation = Vec::new();
    let mut graphs = Vec::new();
    for (mode, seed, outputs) in analyses {
        let mut reports = Vec::new();
        for o in outputs {
            reports.extend(o.probes);
            graphs.extend(o.graphs.into_iter().map(|(tensor, threshold, edges, kept_fraction)| GraphRecord { mode, seed, tensor, threshold, edges, kept_fraction }));
            saturation.extend(o.saturation.into_iter().map(|(layer, gate, units, right_share, left_share)| SaturationRecord {
                mode,
                seed,
                layer,
                gate,
                units,
                right_share,
                left_share,
            }));
        }
        if !reports.is_empty() {
            probes.push(ProbeRecord { mode, seed, reports });
        }
    }

    let mut swaps = Vec::new();
    let both = cfg.mode.modes().len() == 2;
    if cfg.swap.enabled && both {
        let pairs: Vec<u64> = cfg.seeds.iter().copied().take(cfg.swap.runs).collect();
        let cells: Vec<(Mode, u64)> = [Mode::Guided, Mode::Baseline].into_iter().flat_map(|m| pairs.iter().map(move |&s| (m, s))).collect();
        for (host_mode, seed) in cells {
            eprintln!("swap host {host_mode} seed {seed}");
            let dir = out.join("swap").join(format!("{}-host-s{seed}", host_mode.tag()));
            swaps.extend(swap(
                cfg,
                &model_dir(out, host_mode, seed),
                &model_dir(out, host_mode.opposite(), seed),
                &cfg.swap.components,
                &[seed],
                &data,
                &dir,
            )?);
        }
    }

    let mut prunes = Vec::new();
    if cfg.prune.enabled && cfg.mode.modes().contains(&Mode::Guided) {
        let jobs: Vec<u64> = cfg.seeds.clone();
        prunes = jobs
            .par_iter()
            .map(|&seed| {
                eprintln!("prune {} seed {seed}", Mode::Guided);
                let dir = out.join("prune").join(format!("{}-s{seed}", Mode::Guided.tag()));
                prune(cfg, &model_dir(out, Mode::Guided, seed), &data, cfg.prune.keep_frac, false, seed, &dir)
            })
            .collect::<Result<Vec<_>, _>>()?;
    }

    let summary = ReproduceSummary { config_hash: cfg.hash(), config: cfg.clone(), models, probes, saturation, graphs, swaps, prunes };
    let report = out.join("report");
    fs::create_dir_all(&report)?;
    write_text(&report.join("accuracies_per_seed.csv"), &per_seed_csv(&summary.models))?;
    write_text(&report.join("accuracy_summary.csv"), &accuracy_summary_csv(&summary.models))?;
    write_text(&report.join("probes.csv"), &probes_csv(&summary.probes))?;
    write_text(&report.join("saturation.csv"), &saturation_csv(&summary.saturation))?;
    write_text(&report.join("graphs.csv"), &graphs_csv(&summary.graphs))?;
    write_text(&report.join("substitution.csv"), &substitution_csv(&summary))?;
    write_text(&report.join("pruning.csv"), &pruning_csv(&summary.prunes))?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    write_manifest(out, "reproduce", &cfg.hash(), cfg.seeds.first().copied())?;
    Ok(summary)
}

pub fn read_summary(dir: &Path) -> Result<ReproduceSummary, CliError> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}
