//! Weight and activation analyses of trained models: heatmaps,
//! connectivity graphs, activation traces, gate saturation, diagnostic
//! classifiers and functional groups.

mod export;
mod probe;
mod stats;
mod strength;
mod trace;

#[cfg(test)]
mod tests;

pub use export::{
    connectivity_graph, distributions_svg, heatmap_csv, heatmap_svg, parse_heatmap_csv, row_mean_abs, saturation_svg, ConnectivityGraph,
    Edge,
};
pub use probe::{functional_group, top_units, top_weight_overlap, train_probe, LinearProbe, ProbeConfig, ProbeData, ProbeReport};
pub use stats::{
    activation_distributions, distributions_csv, gate_probe_data, gate_saturation, summarize, table_probe_data, timestep_probe_data,
    SaturationStats, UnitDistribution,
};
pub use strength::NeuronStrength;
pub use trace::{capture, capture_traces, read_traces, write_traces, ActivationTrace, Signal, StepActivations, TraceSet};

use thiserror::Error;

use crate::numcore::NumError;
use crate::seq2seq::{Layer, Seq2SeqModel};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("probe: {0}")]
    Probe(String),
    #[error("invalid analysis request: {0}")]
    Config(String),
    #[error("bad file: {0}")]
    Format(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Diagnostic-classifier reports for one model, computed on test traces.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProbeSuite {
    pub table: ProbeReport,
    pub timestep: ProbeReport,
    pub update_gate: ProbeReport,
    pub reset_gate: ProbeReport,
}

/// Runs the table, timestep and decoder gate probes and fills in the
/// top-weight overlap of each group (encoder strengths for encoder probes,
/// decoder strengths for gate probes).
pub fn probe_suite(model: &Seq2SeqModel, traces: &TraceSet, config: &ProbeConfig, top_frac: f64) -> Result<ProbeSuite, AnalysisError> {
    let enc = NeuronStrength::compute(model, Layer::Encoder);
    let dec = NeuronStrength::compute(model, Layer::Decoder);
    let run = |task: &str, data: ProbeData, strengths: &NeuronStrength| -> Result<ProbeReport, AnalysisError> {
        let (_, mut report) = functional_group(task, &data, config)?;
        report.top_weight_overlap = Some(top_weight_overlap(&report.group, &strengths.values, top_frac));
        Ok(report)
    };
    Ok(ProbeSuite {
        table: run("encoder-hidden/table", table_probe_data(traces)?, &enc)?,
        timestep: run("encoder-hidden/timestep", timestep_probe_data(traces)?, &enc)?,
        update_gate: run("decoder-update/table", gate_probe_data(traces, Signal::Update)?, &dec)?,
        reset_gate: run("decoder-reset/table", gate_probe_data(traces, Signal::Reset)?, &dec)?,
    })
}
