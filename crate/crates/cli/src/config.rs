//! Experiment configuration file (versioned JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use attnguide::ablate::ComponentKind;
use attnguide::analysis::ProbeConfig;
use attnguide::seq2seq::{Mode, ModelConfig, TrainingConfig};
use attnguide::taskgen::SplitConfig;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Which training modes a run covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Baseline,
    Ag,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeSelection::Baseline => vec![Mode::Baseline],
            ModeSelection::Ag => vec![Mode::Guided],
            ModeSelection::Both => vec![Mode::Guided, Mode::Baseline],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    pub probes: bool,
    pub probe: ProbeConfig,
    /// Share of units counted as strongest for the overlap measure.
    pub top_frac: f64,
    pub saturation_lo: f64,
    pub saturation_hi: f64,
    /// Share of a unit's samples that makes it "right-saturated".
    pub right_saturation_min: f64,
    /// `(tensor, threshold)` pairs rendered as connectivity graphs.
    pub graphs: Vec<(String, f64)>,
    /// Tensors exported as heatmaps when no tensor is named.
    pub heatmaps: Vec<String>,
    /// Units sampled for activation distribution plots.
    pub distribution_units: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            probes: true,
            probe: ProbeConfig::default(),
            top_frac: 0.05,
            saturation_lo: 0.1,
            saturation_hi: 0.9,
            right_saturation_min: 0.5,
            graphs: vec![("encoder.gru.W_hz".into(), 0.2), ("decoder.gru.W_iz".into(), 0.17)],
            heatmaps: ["encoder.embedding", "encoder.gru.W_hz", "decoder.gru.W_iz", "decoder.gru.W_hz"].map(String::from).to_vec(),
            distribution_units: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapSettings {
    pub enabled: bool,
    pub components: Vec<ComponentKind>,
    /// Retraining runs per cell; run `k` pairs the models of seed `k`.
    pub runs: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub patience: Option<usize>,
}

impl Default for SwapSettings {
    fn default() -> Self {
        SwapSettings { enabled: true, components: ComponentKind::ALL.to_vec(), runs: 3, max_epochs: 100, lr: 1e-3, patience: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSettings {
    pub enabled: bool,
    pub keep_frac: f64,
    pub retrain_epochs: usize,
}

impl Default for PruneSettings {
    fn default() -> Self {
        PruneSettings { enabled: true, keep_frac: 0.05, retrain_epochs: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Seed of the lookup tables and splits shared by every model.
    pub data_seed: u64,
    pub split: SplitConfig,
    /// Model seeds; each mode trains one model per seed.
    pub seeds: Vec<u64>,
    pub mode: ModeSelection,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub analysis: AnalysisSettings,
    pub swap: SwapSettings,
    pub prune: PruneSettings,
    /// Worker threads for independent jobs; 0 uses every core.
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            data_seed: 1,
            split: SplitConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            mode: ModeSelection::Both,
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            analysis: AnalysisSettings::default(),
            swap: SwapSettings::default(),
            prune: PruneSettings::default(),
            threads: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} unsupported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        self.training.validate().map_err(|e| CliError::Input(e.to_string()))?;
        if self.model.hidden == 0 || self.model.embed_dim == 0 || self.model.attn_dim == 0 {
            return bad("model dimensions must be positive".into());
        }
        let a = &self.analysis;
        if !(0.0 < a.top_frac && a.top_frac <= 1.0) {
            return bad(format!("analysis.top_frac {} outside (0, 1]", a.top_frac));
        }
        if !(0.0 <= a.saturation_lo && a.saturation_lo < a.saturation_hi && a.saturation_hi <= 1.0) {
            return bad("analysis saturation bounds must satisfy 0 <= lo < hi <= 1".into());
        }
        if a.graphs.iter().any(|(_, t)| !(*t >= 0.0)) {
            return bad("graph thresholds must be non-negative".into());
        }
        if self.swap.enabled && (self.swap.runs == 0 || self.swap.max_epochs == 0 || self.swap.max_epochs > attnguide::seq2seq::MAX_EPOCHS) {
            return bad("swap needs runs >= 1 and max_epochs in 1..=100".into());
        }
        if self.prune.enabled && !(0.0 < self.prune.keep_frac && self.prune.keep_frac <= 1.0) {
            return bad(format!("prune.keep_frac {} outside (0, 1]", self.prune.keep_frac));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn training_for(&self, seed: u64) -> TrainingConfig {
        TrainingConfig { seed, ..self.training.clone() }
    }

    pub fn swap_training(&self, seed: u64) -> TrainingConfig {
        TrainingConfig { seed, max_epochs: self.swap.max_epochs, lr: self.swap.lr, patience: self.swap.patience, ..self.training.clone() }
    }

    pub fn prune_training(&self, seed: u64) -> TrainingConfig {
        TrainingConfig { seed, max_epochs: self.prune.retrain_epochs, patience: None, ..self.training.clone() }
    }
}
