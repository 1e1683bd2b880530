//! Browser demo: generate the task, train a small guided or baseline
//! model epoch by epoch, and decode inputs with their attention maps.
//! Every entry point returns JSON text.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use attnguide::numcore::{AdamConfig, AdamState, Rng, Tape};
use attnguide::seq2seq::{batch_gradients, evaluate, Decoding, Mode, ModelConfig, Seq2SeqModel, TrainingConfig};
use attnguide::taskgen::{Bits, DatasetBundle, DecToken, EncToken, Example, Split, SplitConfig};

const SAMPLES_PER_SPLIT: usize = 4;

fn task_json(bundle: &DatasetBundle) -> Value {
    let tables: Vec<Value> = bundle
        .tables
        .iter()
        .map(|t| json!({ "id": format!("t{}", t.id), "outputs": Bits::all().map(|b| t.apply(b).to_string()).collect::<Vec<_>>() }))
        .collect();
    let splits: Vec<Value> = Split::ALL
        .iter()
        .map(|&s| {
            let ex = bundle.split(s);
            let samples: Vec<Value> = ex
                .iter()
                .take(SAMPLES_PER_SPLIT)
                .map(|e| json!({ "input": join(&e.input), "target": join(&e.target) }))
                .collect();
            json!({ "split": s.short(), "count": ex.len(), "samples": samples })
        })
        .collect();
    json!({ "seed": bundle.seed, "inputs": Bits::all().map(|b| b.to_string()).collect::<Vec<_>>(), "tables": tables, "splits": splits })
}

fn join<T: std::fmt::Display>(tokens: &[T]) -> String {
    tokens.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Tables, split sizes and a few examples per split for `seed`.
#[wasm_bindgen]
pub fn generate_task(seed: u32) -> String {
    task_json(&DatasetBundle::generate(seed as u64, SplitConfig::default())).to_string()
}

/// A small model trained in place, one epoch per call.
#[wasm_bindgen]
pub struct Session {
    bundle: DatasetBundle,
    model: Seq2SeqModel,
    adam: AdamState,
    rng: Rng,
    epoch: usize,
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(data_seed: u32, model_seed: u32, guided: bool, hidden: usize) -> Session {
        let hidden = hidden.clamp(4, 128);
        let mode = if guided { Mode::Guided } else { Mode::Baseline };
        let model = Seq2SeqModel::new(ModelConfig::small(16, hidden), mode, &mut Rng::named(model_seed as u64, "init"));
        let adam = AdamState::new(&model.params, AdamConfig::with_lr(TrainingConfig::default().lr));
        Session {
            bundle: DatasetBundle::generate(data_seed as u64, SplitConfig::default()),
            model,
            adam,
            rng: Rng::named(model_seed as u64, "batches"),
            epoch: 0,
        }
    }

    /// One pass over the training split with batch size 1; returns the
    /// mean loss and the accuracy on every split.
    pub fn train_epoch(&mut self) -> Result<String, JsValue> {
        let weight = TrainingConfig::default().weight_for(self.model.mode);
        let mut order: Vec<&Example> = self.bundle.train.iter().collect();
        self.rng.shuffle(&mut order);
        let mut total = 0.0;
        for ex in &order {
            let (loss, _, _, grads) = batch_gradients(&self.model, &[ex], weight).map_err(|e| JsValue::from_str(&e.to_string()))?;
            if !loss.is_finite() {
                return Err(JsValue::from_str("training diverged"));
            }
            self.adam.step(&mut self.model.params, &grads).map_err(|e| JsValue::from_str(&e.to_string()))?;
            total += loss;
        }
        self.epoch += 1;
        let acc: serde_json::Map<String, Value> = Split::ALL.iter().map(|&s| (s.short().to_string(), json!(evaluate(&self.model, self.bundle.split(s))))).collect();
        Ok(json!({ "epoch": self.epoch, "loss": total / order.len() as f64, "accuracy": acc }).to_string())
    }

    /// Greedy decode of an input like `010 t3 t5`, with the attention row
    /// of every decoder step and the correct output.
    pub fn decode(&self, input: &str) -> Result<String, JsValue> {
        decode_json(&self.model, &self.bundle, input).map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
    }

    pub fn task(&self) -> String {
        task_json(&self.bundle).to_string()
    }
}

/// Parses `<string> t<i> t<j> ...` into an example over the bundle's tables.
pub fn parse_input(bundle: &DatasetBundle, input: &str) -> Result<Example, String> {
    let tokens: Vec<EncToken> = input.split_whitespace().map(|t| EncToken::parse(t).ok_or_else(|| format!("unknown token {t:?}"))).collect::<Result<_, _>>()?;
    let (first, rest) = tokens.split_first().ok_or("empty input")?;
    let x = match first {
        EncToken::Bits(b) => *b,
        EncToken::Table(_) => return Err("input must start with a 3-bit string".into()),
    };
    if rest.is_empty() {
        return Err("name at least one table".into());
    }
    let tables = rest
        .iter()
        .map(|t| match t {
            EncToken::Table(id) => Ok(bundle.table(*id)),
            EncToken::Bits(_) => Err("only the first token may be a string".to_string()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Example::build(x, &tables))
}

pub fn decode_json(model: &Seq2SeqModel, bundle: &DatasetBundle, input: &str) -> Result<Value, String> {
    let ex = parse_input(bundle, input)?;
    let mut tape = Tape::new(&model.params);
    let fwd = model.forward(&mut tape, &[&ex], Decoding::Greedy);
    let predicted: Vec<String> = fwd.predictions[0].iter().map(|&i| DecToken::from_index(i).map_or("?".into(), |t| t.to_string())).collect();
    let attention: Vec<Vec<f64>> = fwd.decoder.iter().map(|s| tape.value(s.attention).row(0).to_vec()).collect();
    let expected: Vec<String> = ex.target.iter().map(ToString::to_string).collect();
    Ok(json!({
        "input": ex.input.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "predicted": predicted,
        "expected": expected,
        "correct": predicted == expected,
        "attention": attention,
        "target_attention": ex.attention,
    }))
}
