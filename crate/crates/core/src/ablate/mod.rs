//! Cross-model component substitution with frozen retraining, and
//! strong-unit pruning with masked recovery training.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{top_units, NeuronStrength};
use crate::numcore::{Gradients, Matrix, ParamId};
use crate::seq2seq::{evaluate, train, Axis, Layer, Mode, Seq2SeqModel, TrainError, TrainOutcome, TrainingConfig};
use crate::taskgen::{DatasetBundle, Split};

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum AblateError {
    #[error("component mismatch: {0}")]
    Mismatch(String),
    #[error("invalid request: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    Encoder,
    Decoder,
    EncoderEmbedding,
    DecoderEmbedding,
    EncoderWih,
    EncoderWhh,
    DecoderWih,
    DecoderWhh,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 8] = [
        ComponentKind::Encoder,
        ComponentKind::Decoder,
        ComponentKind::EncoderEmbedding,
        ComponentKind::DecoderEmbedding,
        ComponentKind::EncoderWih,
        ComponentKind::EncoderWhh,
        ComponentKind::DecoderWih,
        ComponentKind::DecoderWhh,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ComponentKind::Encoder => "encoder",
            ComponentKind::Decoder => "decoder",
            ComponentKind::EncoderEmbedding => "encoder-embedding",
            ComponentKind::DecoderEmbedding => "decoder-embedding",
            ComponentKind::EncoderWih => "encoder-wih",
            ComponentKind::EncoderWhh => "encoder-whh",
            ComponentKind::DecoderWih => "decoder-wih",
            ComponentKind::DecoderWhh => "decoder-whh",
        }
    }

    pub fn parse(s: &str) -> Option<ComponentKind> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL.into_iter().find(|k| k.tag() == norm)
    }

    /// Whether a tensor belongs to this component. Wih/Whh bundles hold
    /// the three weight matrices only; their biases stay with the host.
    pub fn contains(self, tensor: &str) -> bool {
        let gru = |prefix: &str, mats: [&str; 3]| mats.iter().any(|m| tensor == format!("{prefix}.gru.{m}"));
        match self {
            ComponentKind::Encoder => tensor.starts_with("encoder."),
            ComponentKind::Decoder => tensor.starts_with("decoder."),
            ComponentKind::EncoderEmbedding => tensor == "encoder.embedding",
            ComponentKind::DecoderEmbedding => tensor == "decoder.embedding",
            ComponentKind::EncoderWih => gru("encoder", ["W_iz", "W_ir", "W_ih"]),
            ComponentKind::EncoderWhh => gru("encoder", ["W_hz", "W_hr", "W_hh"]),
            ComponentKind::DecoderWih => gru("decoder", ["W_iz", "W_ir", "W_ih"]),
            ComponentKind::DecoderWhh => gru("decoder", ["W_hz", "W_hr", "W_hh"]),
        }
    }
}

impl std::fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Named tensors lifted out of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub kind: ComponentKind,
    pub source_mode: Mode,
    pub tensors: Vec<(String, Matrix)>,
}

pub fn extract_component(model: &Seq2SeqModel, kind: ComponentKind) -> Component {
    let tensors = model.params.iter().filter(|(_, p)| kind.contains(&p.name)).map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
    Component { kind, source_mode: model.mode, tensors }
}

/// Copies the component into `host`, optionally freezing the implanted
/// tensors. Every tensor must exist in the host with the same shape.
pub fn implant_component(host: &mut Seq2SeqModel, component: &Component, freeze: bool) -> Result<(), AblateError> {
    let mut ids = Vec::with_capacity(component.tensors.len());
    for (name, value) in &component.tensors {
        let id = host.params.find(name).ok_or_else(|| AblateError::Mismatch(format!("host has no tensor {name}")))?;
        let have = host.params.get(id).value.shape();
        if have != value.shape() {
            return Err(AblateError::Mismatch(format!("{name}: host {have:?}, donor {:?}", value.shape())));
        }
        ids.push(id);
    }
    for (id, (_, value)) in ids.into_iter().zip(&component.tensors) {
        let p = host.params.get_mut(id);
        p.value = value.clone();
        p.frozen = freeze;
    }
    Ok(())
}

/// Accuracy on each of the five splits, keyed by short split name.
pub fn split_accuracies(model: &Seq2SeqModel, bundle: &DatasetBundle) -> BTreeMap<String, f64> {
    Split::ALL.iter().map(|&s| (s.short().to_string(), evaluate(model, bundle.split(s)))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub host_mode: Mode,
    pub component: ComponentKind,
    pub seed: u64,
    pub accuracies: BTreeMap<String, f64>,
    pub best_epoch: usize,
    /// Set when retraining diverged; accuracies are then empty.
    pub error: Option<String>,
}

/// Implants `donor`'s component, frozen, into a copy of `host` and
/// retrains the host with its own loss.
pub fn substitute_and_retrain(
    host: &Seq2SeqModel,
    donor: &Seq2SeqModel,
    kind: ComponentKind,
    bundle: &DatasetBundle,
    config: &TrainingConfig,
) -> Result<(TrainOutcome, SwapRecord), AblateError> {
    if host.config != donor.config {
        return Err(AblateError::Mismatch("host and donor architectures differ".into()));
    }
    let mut model = host.clone();
    model.unfreeze_all();
    implant_component(&mut model, &extract_component(donor, kind), true)?;
    let outcome = train(model, bundle, config)?;
    let record = SwapRecord {
        host_mode: host.mode,
        component: kind,
        seed: config.seed,
        accuracies: split_accuracies(&outcome.model, bundle),
        best_epoch: outcome.best_epoch,
        error: None,
    };
    Ok((outcome, record))
}

/// Hidden units kept per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub keep_frac: f64,
    pub keep: BTreeMap<Layer, Vec<bool>>,
}

impl PruneMask {
    /// Keeps the `ceil(keep_frac * hidden)` strongest units of each layer.
    /// A zero fraction is refused unless `force` is set.
    pub fn from_strengths(model: &Seq2SeqModel, keep_frac: f64, force: bool) -> Result<PruneMask, AblateError> {
        if !(0.0..=1.0).contains(&keep_frac) {
            return Err(AblateError::Config(format!("keep fraction {keep_frac} outside [0, 1]")));
        }
        if keep_frac == 0.0 && !force {
            return Err(AblateError::Config("keep fraction 0 removes every unit; pass force to allow it".into()));
        }
        let mut keep = BTreeMap::new();
        for layer in Layer::BOTH {
            let strengths = NeuronStrength::compute(model, layer);
            let mut flags = vec![false; strengths.values.len()];
            for u in top_units(&strengths.values, keep_frac) {
                flags[u] = true;
            }
            keep.insert(layer, flags);
        }
        Ok(PruneMask { keep_frac, keep })
    }

    pub fn kept(&self, layer: Layer) -> usize {
        self.keep.get(&layer).map_or(0, |f| f.iter().filter(|&&k| k).count())
    }

    /// Flat indices, per tensor, of every entry incident to a removed unit.
    pub fn masked_entries(&self, model: &Seq2SeqModel) -> Vec<(ParamId, Vec<usize>)> {
        let mut per: BTreeMap<usize, (ParamId, Vec<usize>)> = BTreeMap::new();
        for inc in model.incidences() {
            let id = model.params.find(&inc.tensor).expect("incidence names a tensor");
            let m = &model.params.get(id).value;
            let entry = &mut per.entry(id.index()).or_insert_with(|| (id, Vec::new())).1;
            for (j, &kept) in self.keep[&inc.layer].iter().enumerate() {
                if kept {
                    continue;
                }
                match inc.axis {
                    Axis::Row => entry.extend((0..m.cols()).map(|c| (inc.offset + j) * m.cols() + c)),
                    Axis::Col => entry.extend((0..m.rows()).map(|r| r * m.cols() + inc.offset + j)),
                }
            }
        }
        per.into_values()
            .map(|(id, mut v)| {
                v.sort_unstable();
                v.dedup();
                (id, v)
            })
            .collect()
    }

    pub fn apply(&self, model: &mut Seq2SeqModel) {
        for (id, entries) in self.masked_entries(model) {
            let data = model.params.get_mut(id).value.data_mut();
            entries.into_iter().for_each(|i| data[i] = 0.0);
        }
    }
}

pub fn prune_model(model: &Seq2SeqModel, keep_frac: f64, force: bool) -> Result<(Seq2SeqModel, PruneMask), AblateError> {
    let mask = PruneMask::from_strengths(model, keep_frac, force)?;
    let mut pruned = model.clone();
    mask.apply(&mut pruned);
    Ok((pruned, mask))
}

/// Retrains a pruned model with gradients to masked entries suppressed, so
/// those weights stay exactly zero.
pub fn retrain_pruned(model: Seq2SeqModel, mask: &PruneMask, bundle: &DatasetBundle, config: &TrainingConfig) -> Result<TrainOutcome, AblateError> {
    let entries = mask.masked_entries(&model);
    let filter = move |g: &mut Gradients| {
        for (id, idx) in &entries {
            let data = g.get_mut(*id).data_mut();
            idx.iter().for_each(|&i| data[i] = 0.0);
        }
    };
    let (fit, val) = crate::seq2seq::carve_validation(&bundle.train, config.validation_fraction, config.seed);
    Ok(crate::seq2seq::train_on(model, &fit, &val, config, Some(&filter))?)
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    (mean, sd)
}

/// Table-layout CSV: one row per component (`-` for unswapped models),
/// one column per host mode, cells `mean ± sd` of new-composition accuracy.
pub fn swap_table_csv(records: &[SwapRecord], unswapped: &BTreeMap<Mode, Vec<f64>>) -> String {
    let cell = |v: &[f64]| {
        if v.is_empty() {
            return String::new();
        }
        let (m, s) = mean_sd(v);
        format!("{m:.3} ± {s:.3}")
    };
    let mut out = String::from("component,AG host,baseline host\n");
    let get = |mode: Mode| unswapped.get(&mode).cloned().unwrap_or_default();
    out.push_str(&format!("-,{},{}\n", cell(&get(Mode::Guided)), cell(&get(Mode::Baseline))));
    for kind in ComponentKind::ALL {
        let nc = |mode: Mode| -> Vec<f64> {
            records
                .iter()
                .filter(|r| r.component == kind && r.host_mode == mode && r.error.is_none())
                .filter_map(|r| r.accuracies.get("nc").copied())
                .collect()
        };
        let (ag, bl) = (nc(Mode::Guided), nc(Mode::Baseline));
        if ag.is_empty() && bl.is_empty() {
            continue;
        }
        out.push_str(&format!("{},{},{}\n", kind.tag(), cell(&ag), cell(&bl)));
    }
    out
}
