//! Run records collected by `reproduce` and the CSV tables rendered
//! from them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use attnguide::ablate::{mean_sd, swap_table_csv, SwapRecord};
use attnguide::analysis::ProbeReport;
use attnguide::seq2seq::Mode;
use attnguide::taskgen::Split;

use crate::config::ExperimentConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub mode: Mode,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub accuracies: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub mode: Mode,
    pub seed: u64,
    pub reports: Vec<ProbeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationRecord {
    pub mode: Mode,
    pub seed: u64,
    pub layer: String,
    pub gate: String,
    pub units: usize,
    /// Share of units right-saturated on at least the configured share of
    /// their samples.
    pub right_share: f64,
    pub left_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub mode: Mode,
    pub seed: u64,
    pub tensor: String,
    pub threshold: f64,
    pub edges: usize,
    pub kept_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub seed: u64,
    pub mode: Mode,
    pub keep_frac: f64,
    pub kept_units: BTreeMap<String, usize>,
    pub before: BTreeMap<String, f64>,
    pub pruned: BTreeMap<String, f64>,
    pub retrained: BTreeMap<String, f64>,
    pub retrain_best_epoch: usize,
    /// Every masked weight is exactly zero after retraining.
    pub mask_intact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub models: Vec<ModelRecord>,
    pub probes: Vec<ProbeRecord>,
    pub saturation: Vec<SaturationRecord>,
    pub graphs: Vec<GraphRecord>,
    pub swaps: Vec<SwapRecord>,
    pub prunes: Vec<PruneRecord>,
}

impl ReproduceSummary {
    pub fn accuracies(&self, mode: Mode, split: &str) -> Vec<f64> {
        self.models.iter().filter(|m| m.mode == mode).filter_map(|m| m.accuracies.get(split).copied()).collect()
    }

    pub fn probe(&self, mode: Mode, task: &str) -> Vec<&ProbeReport> {
        self.probes.iter().filter(|p| p.mode == mode).flat_map(|p| p.reports.iter().filter(|r| r.task == task)).collect()
    }
}

/// Per-model sequence accuracy, one row per model.
pub fn per_seed_csv(models: &[ModelRecord]) -> String {
    let mut out = String::from("mode,seed,best_epoch");
    for s in Split::ALL {
        out.push(',');
        out.push_str(s.short());
    }
    out.push('\n');
    for m in models {
        out.push_str(&format!("{},{},{}", m.mode, m.seed, m.best_epoch));
        for s in Split::ALL {
            out.push_str(&format!(",{:.4}", m.accuracies.get(s.short()).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

pub fn probes_csv(probes: &[ProbeRecord]) -> String {
    let mut out = String::from("mode,seed,task,classes,full_accuracy,group_size,group_accuracy,top_weight_overlap,group\n");
    for p in probes {
        for r in &p.reports {
            let group: Vec<String> = r.group.iter().map(ToString::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{:.4},{},{:.4},{},{}\n",
                p.mode,
                p.seed,
                r.task,
                r.n_classes,
                r.full_accuracy,
                r.group_size,
                r.group_accuracy,
                r.top_weight_overlap.map_or(String::new(), |v| format!("{v:.4}")),
                group.join(" ")
            ));
        }
    }
    out
}

pub fn saturation_csv(records: &[SaturationRecord]) -> String {
    let mut out = String::from("mode,seed,layer,gate,units,right_share,left_share\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{},{:.4},{:.4}\n", r.mode, r.seed, r.layer, r.gate, r.units, r.right_share, r.left_share));
    }
    out
}

pub fn graphs_csv(records: &[GraphRecord]) -> String {
    let mut out = String::from("mode,seed,tensor,threshold,edges,kept_fraction\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{},{:.6}\n", r.mode, r.seed, r.tensor, r.threshold, r.edges, r.kept_fraction));
    }
    out
}

pub fn pruning_csv(records: &[PruneRecord]) -> String {
    let mut out = String::from("mode,seed,keep_frac,encoder_units,decoder_units,nc_before,nc_pruned,nc_retrained,mask_intact\n");
    for r in records {
        let nc = |m: &BTreeMap<String, f64>| m.get("nc").copied().unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{},{},{},{},{},{:.4},{:.4},{:.4},{}\n",
            r.mode,
            r.seed,
            r.keep_frac,
            r.kept_units.get("encoder").copied().unwrap_or(0),
            r.kept_units.get("decoder").copied().unwrap_or(0),
            nc(&r.before),
            nc(&r.pruned),
            nc(&r.retrained),
            r.mask_intact
        ));
    }
    out
}

/// Component substitution table with the unswapped models in the first row.
pub fn substitution_csv(summary: &ReproduceSummary) -> String {
    let unswapped: BTreeMap<Mode, Vec<f64>> = [Mode::Guided, Mode::Baseline].into_iter().map(|m| (m, summary.accuracies(m, "nc"))).collect();
    swap_table_csv(&summary.swaps, &unswapped)
}

/// Mean and standard deviation per mode and split.
pub fn accuracy_summary_csv(models: &[ModelRecord]) -> String {
    let mut out = String::from("mode,split,mean,sd,n\n");
    for mode in [Mode::Guided, Mode::Baseline] {
        for s in Split::ALL {
            let v: Vec<f64> = models.iter().filter(|m| m.mode == mode).filter_map(|m| m.accuracies.get(s.short()).copied()).collect();
            if v.is_empty() {
                continue;
            }
            let (m, sd) = mean_sd(&v);
            out.push_str(&format!("{mode},{},{m:.4},{sd:.4},{}\n", s.short(), v.len()));
        }
    }
    out
}
