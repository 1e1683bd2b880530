use serde::{Deserialize, Serialize};

use crate::numcore::{Matrix, Rng};
use crate::seq2seq::Layer;
use crate::taskgen::N_TABLES;

use super::probe::ProbeData;
use super::trace::{Signal, TraceSet};
use super::AnalysisError;

/// Encoder hidden states at table positions, labelled with the table.
pub fn table_probe_data(traces: &TraceSet) -> Result<ProbeData, AnalysisError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for t in &traces.traces {
        for (step, table) in t.encoder.iter().zip(&t.enc_tables) {
            if let Some(id) = table {
                data.extend_from_slice(&step.h);
                labels.push(id - 1);
            }
        }
    }
    ProbeData::new(Matrix::from_vec(labels.len(), traces.hidden, data)?, labels, N_TABLES)
}

/// Encoder hidden states labelled with their position.
pub fn timestep_probe_data(traces: &TraceSet) -> Result<ProbeData, AnalysisError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for t in &traces.traces {
        for (i, step) in t.encoder.iter().enumerate() {
            data.extend_from_slice(&step.h);
            labels.push(i);
        }
    }
    let n_classes = labels.iter().max().map_or(1, |m| m + 1);
    ProbeData::new(Matrix::from_vec(labels.len(), traces.hidden, data)?, labels, n_classes)
}

/// Decoder gate activations at steps that attend a table, labelled with it.
pub fn gate_probe_data(traces: &TraceSet, gate: Signal) -> Result<ProbeData, AnalysisError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for t in &traces.traces {
        for (step, table) in t.decoder.iter().zip(&t.dec_tables) {
            if let Some(id) = table {
                data.extend_from_slice(step.get(gate));
                labels.push(id - 1);
            }
        }
    }
    ProbeData::new(Matrix::from_vec(labels.len(), traces.hidden, data)?, labels, N_TABLES)
}

/// Per gate unit, the share of activations below `lo` (left) and above
/// `hi` (right), pooled over samples and steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationStats {
    pub layer: Layer,
    pub gate: Signal,
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl SaturationStats {
    /// Share of units whose right-saturated fraction is at least `min`.
    pub fn right_saturated_share(&self, min: f64) -> f64 {
        share(&self.right, min)
    }

    pub fn left_saturated_share(&self, min: f64) -> f64 {
        share(&self.left, min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {} {:?} gate saturation over {} samples (lo {}, hi {})\nunit,left,right\n", self.layer.tag(), self.gate, self.samples, self.lo, self.hi);
        for (u, (l, r)) in self.left.iter().zip(&self.right).enumerate() {
            out.push_str(&format!("{u},{l},{r}\n"));
        }
        out
    }
}

fn share(values: &[f64], min: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v >= min).count() as f64 / values.len() as f64
}

pub fn gate_saturation(traces: &TraceSet, layer: Layer, gate: Signal, lo: f64, hi: f64) -> Result<SaturationStats, AnalysisError> {
    if gate == Signal::Hidden {
        return Err(AnalysisError::Config("saturation is defined for update and reset gates".into()));
    }
    if !(lo < hi) {
        return Err(AnalysisError::Config(format!("saturation bounds {lo} and {hi} are not ordered")));
    }
    let m = traces.stack(layer, gate);
    let mut left = vec![0usize; m.cols()];
    let mut right = vec![0usize; m.cols()];
    for r in 0..m.rows() {
        for (u, &v) in m.row(r).iter().enumerate() {
            if v < lo {
                left[u] += 1;
            } else if v > hi {
                right[u] += 1;
            }
        }
    }
    let n = m.rows().max(1) as f64;
    Ok(SaturationStats {
        layer,
        gate,
        lo,
        hi,
        samples: m.rows(),
        left: left.into_iter().map(|c| c as f64 / n).collect(),
        right: right.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Five-number summary of one unit's activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitDistribution {
    pub unit: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl UnitDistribution {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(unit: usize, values: &mut [f64]) -> UnitDistribution {
    values.sort_by(f64::total_cmp);
    UnitDistribution {
        unit,
        min: values[0],
        q1: quantile(values, 0.25),
        median: quantile(values, 0.5),
        q3: quantile(values, 0.75),
        max: values[values.len() - 1],
    }
}

/// Hidden-activation summaries of `k` units sampled without replacement.
pub fn activation_distributions(traces: &TraceSet, layer: Layer, k: usize, rng: &mut Rng) -> Result<Vec<UnitDistribution>, AnalysisError> {
    let m = traces.stack(layer, Signal::Hidden);
    if m.rows() == 0 {
        return Err(AnalysisError::Config("no activations to summarize".into()));
    }
    let units = rng.sample_indices(m.cols(), k.min(m.cols()));
    Ok(units.into_iter().map(|u| summarize(u, &mut m.column(u))).collect())
}

pub fn distributions_csv(layer: Layer, dists: &[UnitDistribution]) -> String {
    let mut out = format!("# {} hidden activations; whiskers span the full range\nunit,min,q1,median,q3,max\n", layer.tag());
    for d in dists {
        out.push_str(&format!("{},{},{},{},{},{}\n", d.unit, d.min, d.q1, d.median, d.q3, d.max));
    }
    out
}
