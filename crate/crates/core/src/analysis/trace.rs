//! Per-example activation traces and their on-disk archive
//! (`traces.json` metadata plus `traces.bin`, little-endian `f64`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numcore::{Matrix, Tape};
use crate::seq2seq::{Decoding, Layer, Seq2SeqModel};
use crate::taskgen::{DatasetBundle, EncToken, Example, Split};
use crate::util::write_atomic;

use super::AnalysisError;

const FORMAT: &str = "attnguide-traces";
const VERSION: u32 = 1;

/// Hidden state and gate activations of one GRU step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepActivations {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    /// Position of the example within its split.
    pub example_id: usize,
    pub split: Split,
    pub input: Vec<usize>,
    pub encoder: Vec<StepActivations>,
    pub decoder: Vec<StepActivations>,
    /// One attention row per decoder step.
    pub attention: Vec<Vec<f64>>,
    /// Table id (1-based) of each encoder position; `None` for the string.
    pub enc_tables: Vec<Option<usize>>,
    /// Table the target attention points at, per decoder step. The copy
    /// step and the final `<eos>` step carry `None`.
    pub dec_tables: Vec<Option<usize>>,
}

impl ActivationTrace {
    fn meta(&self) -> TraceMeta {
        TraceMeta {
            example_id: self.example_id,
            split: self.split.short().to_string(),
            input: self.input.clone(),
            encoder_steps: self.encoder.len(),
            decoder_steps: self.decoder.len(),
            enc_tables: self.enc_tables.clone(),
            dec_tables: self.dec_tables.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub hidden: usize,
    pub traces: Vec<ActivationTrace>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Hidden,
    Update,
    Reset,
}

impl Signal {
    pub fn tag(self) -> &'static str {
        match self {
            Signal::Hidden => "hidden",
            Signal::Update => "update",
            Signal::Reset => "reset",
        }
    }

    pub fn parse(s: &str) -> Option<Signal> {
        match s {
            "hidden" | "h" => Some(Signal::Hidden),
            "update" | "z" => Some(Signal::Update),
            "reset" | "r" => Some(Signal::Reset),
            _ => None,
        }
    }
}

impl StepActivations {
    pub fn get(&self, signal: Signal) -> &[f64] {
        match signal {
            Signal::Hidden => &self.h,
            Signal::Update => &self.z,
            Signal::Reset => &self.r,
        }
    }
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Traces of the four test splits.
    pub fn test_only(&self) -> TraceSet {
        TraceSet { hidden: self.hidden, traces: self.traces.iter().filter(|t| t.split != Split::Train).cloned().collect() }
    }

    /// Every step of `side`, in trace order.
    pub fn steps(&self, side: Layer) -> impl Iterator<Item = &StepActivations> {
        self.traces.iter().flat_map(move |t| match side {
            Layer::Encoder => t.encoder.iter(),
            Layer::Decoder => t.decoder.iter(),
        })
    }

    /// Stacks `signal` over all steps of `side` into a `[steps x hidden]`
    /// matrix.
    pub fn stack(&self, side: Layer, signal: Signal) -> Matrix {
        let mut data = Vec::new();
        let mut rows = 0;
        for s in self.steps(side) {
            data.extend_from_slice(s.get(signal));
            rows += 1;
        }
        Matrix::from_vec(rows, self.hidden, data).expect("uniform trace width")
    }
}

/// Teacher-forced traces for `examples`, in the given order.
pub fn capture(model: &Seq2SeqModel, examples: &[(Split, usize, &Example)]) -> TraceSet {
    let mut slots: Vec<Option<ActivationTrace>> = vec![None; examples.len()];
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, (_, _, ex)) in examples.iter().enumerate() {
        groups.entry((ex.input.len(), ex.target.len())).or_default().push(i);
    }
    let row = |m: &Matrix, r: usize| m.row(r).to_vec();
    for idx in groups.into_values() {
        for chunk in idx.chunks(128) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| examples[i].2).collect();
            let mut tape = Tape::new(&model.params);
            let fwd = model.forward(&mut tape, &batch, Decoding::TeacherForced);
            for (k, &i) in chunk.iter().enumerate() {
                let (split, example_id, ex) = examples[i];
                let step = |o: &crate::seq2seq::GruOut| StepActivations {
                    h: row(tape.value(o.h), k),
                    z: row(tape.value(o.z), k),
                    r: row(tape.value(o.r), k),
                };
                let enc_tables: Vec<Option<usize>> = ex
                    .input
                    .iter()
                    .map(|t| match t {
                        EncToken::Table(id) => Some(*id),
                        EncToken::Bits(_) => None,
                    })
                    .collect();
                let last = ex.target.len() - 1;
                let dec_tables = ex.attention.iter().enumerate().map(|(t, &a)| if t == last { None } else { enc_tables[a] }).collect();
                slots[i] = Some(ActivationTrace {
                    example_id,
                    split,
                    input: ex.input_indices(),
                    encoder: fwd.encoder.iter().map(step).collect(),
                    decoder: fwd.decoder.iter().map(|d| step(&d.gru)).collect(),
                    attention: fwd.decoder.iter().map(|d| row(tape.value(d.attention), k)).collect(),
                    enc_tables,
                    dec_tables,
                });
            }
        }
    }
    TraceSet { hidden: model.config.hidden, traces: slots.into_iter().map(|t| t.expect("every example traced")).collect() }
}

/// Traces every split of the bundle, train first.
pub fn capture_traces(model: &Seq2SeqModel, bundle: &DatasetBundle) -> TraceSet {
    let examples: Vec<(Split, usize, &Example)> =
        Split::ALL.iter().flat_map(|&s| bundle.split(s).iter().enumerate().map(move |(i, e)| (s, i, e))).collect();
    capture(model, &examples)
}

#[derive(Serialize, Deserialize)]
struct TraceMeta {
    example_id: usize,
    split: String,
    input: Vec<usize>,
    encoder_steps: usize,
    decoder_steps: usize,
    enc_tables: Vec<Option<usize>>,
    dec_tables: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ArchiveHeader {
    format: String,
    version: u32,
    hidden: usize,
    /// Per step the blob holds `h`, `z`, `r` (hidden values each); encoder
    /// steps come first, then decoder steps, then the attention rows.
    layout: String,
    traces: Vec<TraceMeta>,
}

pub fn write_traces(set: &TraceSet, dir: &Path) -> Result<(), AnalysisError> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut push = |v: &[f64]| v.iter().for_each(|x| blob.extend_from_slice(&x.to_le_bytes()));
    for t in &set.traces {
        for s in t.encoder.iter().chain(&t.decoder) {
            push(&s.h);
            push(&s.z);
            push(&s.r);
        }
        for a in &t.attention {
            push(a);
        }
    }
    let header = ArchiveHeader {
        format: FORMAT.into(),
        version: VERSION,
        hidden: set.hidden,
        layout: "per trace: encoder steps [h z r], decoder steps [h z r], attention rows".into(),
        traces: set.traces.iter().map(ActivationTrace::meta).collect(),
    };
    write_atomic(&dir.join("traces.bin"), &blob)?;
    write_atomic(&dir.join("traces.json"), serde_json::to_string(&header)?.as_bytes())?;
    Ok(())
}

pub fn read_traces(dir: &Path) -> Result<TraceSet, AnalysisError> {
    let header: ArchiveHeader = serde_json::from_str(&fs::read_to_string(dir.join("traces.json"))?)?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(AnalysisError::Format(format!("unsupported trace archive {} v{}", header.format, header.version)));
    }
    let bytes = fs::read(dir.join("traces.bin"))?;
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let h = header.hidden;
    let mut take = |n: usize| -> Result<Vec<f64>, AnalysisError> {
        let v: Vec<f64> = values.by_ref().take(n).collect();
        if v.len() == n {
            Ok(v)
        } else {
            Err(AnalysisError::Format("trace blob is truncated".into()))
        }
    };
    let mut traces = Vec::with_capacity(header.traces.len());
    for m in header.traces {
        let split = Split::parse(&m.split).ok_or_else(|| AnalysisError::Format(format!("unknown split {}", m.split)))?;
        let mut steps = |n: usize| -> Result<Vec<StepActivations>, AnalysisError> {
            (0..n).map(|_| Ok(StepActivations { h: take(h)?, z: take(h)?, r: take(h)? })).collect()
        };
        let encoder = steps(m.encoder_steps)?;
        let decoder = steps(m.decoder_steps)?;
        let attention = (0..m.decoder_steps).map(|_| take(m.input.len())).collect::<Result<_, _>>()?;
        traces.push(ActivationTrace {
            example_id: m.example_id,
            split,
            input: m.input,
            encoder,
            decoder,
            attention,
            enc_tables: m.enc_tables,
            dec_tables: m.dec_tables,
        });
    }
    if take(1).is_ok() {
        return Err(AnalysisError::Format("trace blob has trailing data".into()));
    }
    Ok(TraceSet { hidden: h, traces })
}
