use serde::{Deserialize, Serialize};

use crate::numcore::{Matrix, ParamId, ParamSet, Rng, Tape, Var, PROB_FLOOR};
use crate::taskgen::{DecToken, Example, DEC_VOCAB, ENC_VOCAB};

use super::ModelError;

/// Training regime; both modes share one architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "ag")]
    Guided,
}

impl Mode {
    pub fn tag(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Guided => "ag",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "bl" => Some(Mode::Baseline),
            "ag" | "guided" => Some(Mode::Guided),
            _ => None,
        }
    }

    pub fn opposite(self) -> Mode {
        match self {
            Mode::Baseline => Mode::Guided,
            Mode::Guided => Mode::Baseline,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub enc_vocab: usize,
    pub dec_vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub attn_dim: usize,
    /// Weights start uniform in `[-init_scale, init_scale)`; biases at zero.
    pub init_scale: f64,
    #[serde(default)]
    pub placement: AttentionPlacement,
    /// Embeddings start `N(0, embed_std²)` when set, otherwise like the
    /// other weights.
    #[serde(default)]
    pub embed_std: Option<f64>,
    /// Scale every non-embedding tensor (biases included) by
    /// `1/sqrt(fan_in)` instead of `init_scale`.
    #[serde(default)]
    pub fan_in_init: bool,
}

/// Where the attention context enters the decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionPlacement {
    /// Query with the new state `s_t`; the output layer reads `[s_t; context]`.
    /// The decoder GRU never sees the context.
    PostRnn,
    /// Query with `s_{t-1}`; the context is appended to the GRU input.
    PreRnn,
    /// Query with `s_{t-1}`; the GRU input is
    /// `context ∘ relu([context; embedding] W_f + b_f)`.
    #[default]
    FullFocus,
    /// Like `PostRnn`, but the output layer reads
    /// `tanh([s_t; context] W_c + b_c)`.
    PostRnnCombine,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { enc_vocab: ENC_VOCAB, dec_vocab: DEC_VOCAB, embed_dim: 16, hidden: 512, attn_dim: 512, init_scale: 0.08, placement: AttentionPlacement::FullFocus, embed_std: None, fan_in_init: false }
    }
}

impl ModelConfig {
    /// Same vocabularies, smaller dimensions.
    pub fn small(embed_dim: usize, hidden: usize) -> Self {
        ModelConfig { embed_dim, hidden, attn_dim: hidden, ..Self::default() }
    }
}

/// Parameter handles of one GRU layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruCell {
    pub w_iz: ParamId,
    pub w_ir: ParamId,
    pub w_ih: ParamId,
    pub w_hz: ParamId,
    pub w_hr: ParamId,
    pub w_hh: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

/// Gate activations and new state of one GRU step, as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct GruOut {
    pub h: Var,
    pub z: Var,
    pub r: Var,
}

/// Concrete values of one GRU step.
#[derive(Clone, Debug, PartialEq)]
pub struct GruStep {
    pub h: Matrix,
    pub z: Matrix,
    pub r: Matrix,
}

impl GruCell {
    fn register(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize) -> Self {
        let mut add = |name: &str, r: usize, c: usize| params.add(format!("{prefix}.{name}"), Matrix::zeros(r, c));
        GruCell {
            w_iz: add("W_iz", input, hidden),
            w_ir: add("W_ir", input, hidden),
            w_ih: add("W_ih", input, hidden),
            w_hz: add("W_hz", hidden, hidden),
            w_hr: add("W_hr", hidden, hidden),
            w_hh: add("W_hh", hidden, hidden),
            b_z: add("b_z", 1, hidden),
            b_r: add("b_r", 1, hidden),
            b_h: add("b_h", 1, hidden),
        }
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [self.w_iz, self.w_ir, self.w_ih, self.w_hz, self.w_hr, self.w_hh, self.b_z, self.b_r, self.b_h]
    }

    /// `z = σ(x W_iz + h W_hz + b_z)`, `r = σ(x W_ir + h W_hr + b_r)`,
    /// `h~ = tanh(x W_ih + (r∘h) W_hh + b_h)`, `h' = (1-z)∘h + z∘h~`.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> GruOut {
        self.step_impl(tape, x, h, false)
    }

    pub(crate) fn step_impl(&self, tape: &mut Tape<'_>, x: Var, h: Var, bad_whh_grad: bool) -> GruOut {
        let gate = |tape: &mut Tape<'_>, wi: ParamId, wh: ParamId, b: ParamId, hin: Var, bad: bool| {
            let (wi, wh, b) = (tape.param(wi), tape.param(wh), tape.param(b));
            let xi = tape.matmul(x, wi);
            #[cfg(test)]
            let hh = if bad { tape.matmul_bad_grad(hin, wh) } else { tape.matmul(hin, wh) };
            #[cfg(not(test))]
            let hh = {
                let _ = bad;
                tape.matmul(hin, wh)
            };
            let s = tape.add(xi, hh);
            tape.add_row(s, b)
        };
        let zp = gate(tape, self.w_iz, self.w_hz, self.b_z, h, false);
        let z = tape.sigmoid(zp);
        let rp = gate(tape, self.w_ir, self.w_hr, self.b_r, h, false);
        let r = tape.sigmoid(rp);
        let rh = tape.mul(r, h);
        let cp = gate(tape, self.w_ih, self.w_hh, self.b_h, rh, bad_whh_grad);
        let cand = tape.tanh(cp);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h);
        let new = tape.mul(z, cand);
        let h = tape.add(old, new);
        GruOut { h, z, r }
    }
}

/// One GRU step on concrete matrices (rows are batch entries).
pub fn gru_step(params: &ParamSet, cell: &GruCell, x: &Matrix, h: &Matrix) -> Result<GruStep, ModelError> {
    let input = params.get(cell.w_iz).value.rows();
    let hidden = params.get(cell.w_hz).value.rows();
    if x.cols() != input || h.cols() != hidden || x.rows() != h.rows() {
        return Err(ModelError::Shape(format!(
            "gru_step expects x [B x {input}] and h [B x {hidden}], got {:?} and {:?}",
            x.shape(),
            h.shape()
        )));
    }
    let mut tape = Tape::new(params);
    let (xv, hv) = (tape.input(x.clone()), tape.input(h.clone()));
    let out = cell.step(&mut tape, xv, hv);
    Ok(GruStep { h: tape.value(out.h).clone(), z: tape.value(out.z).clone(), r: tape.value(out.r).clone() })
}

/// MLP attention scorer: `score_i = tanh(s W_q + h_i W_k + b1) w2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionScorer {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSlots {
    pub enc_embedding: ParamId,
    pub encoder: GruCell,
    pub dec_embedding: ParamId,
    pub decoder: GruCell,
    pub attention: AttentionScorer,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
    pub focus: Option<(ParamId, ParamId)>,
    pub combine: Option<(ParamId, ParamId)>,
}

/// Encoder-decoder GRU with MLP attention; see [`AttentionPlacement`] for
/// how the context reaches the output.
#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub mode: Mode,
    pub params: ParamSet,
    pub slots: ModelSlots,
}

/// How the decoder chooses its next input token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoding {
    TeacherForced,
    Greedy,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderStepVars {
    pub gru: GruOut,
    /// `[B x N]` attention weights over encoder positions.
    pub attention: Var,
    pub context: Var,
    /// `[B x V]` output distribution.
    pub probs: Var,
}

/// Tape nodes of one batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub encoder: Vec<GruOut>,
    pub decoder: Vec<DecoderStepVars>,
    /// Greedy (argmax) token per batch row and decoder step.
    pub predictions: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub token: Var,
    pub guidance: Option<Var>,
}

impl Seq2SeqModel {
    /// Registers every tensor (zeros) in a fixed order.
    pub fn empty(config: ModelConfig, mode: Mode) -> Self {
        let ModelConfig { enc_vocab, dec_vocab, embed_dim: e, hidden: h, attn_dim: a, .. } = config;
        let mut params = ParamSet::new();
        let enc_embedding = params.add("encoder.embedding", Matrix::zeros(enc_vocab, e));
        let encoder = GruCell::register(&mut params, "encoder.gru", e, h);
        let dec_embedding = params.add("decoder.embedding", Matrix::zeros(dec_vocab, e));
        let (dec_in, out_in) = match config.placement {
            AttentionPlacement::PostRnn => (e, 2 * h),
            AttentionPlacement::PreRnn => (e + h, h),
            AttentionPlacement::FullFocus => (h, h),
            AttentionPlacement::PostRnnCombine => (e, h),
        };
        let decoder = GruCell::register(&mut params, "decoder.gru", dec_in, h);
        let attention = AttentionScorer {
            w_query: params.add("decoder.attention.W1_query", Matrix::zeros(h, a)),
            w_key: params.add("decoder.attention.W1_key", Matrix::zeros(h, a)),
            b1: params.add("decoder.attention.b1", Matrix::zeros(1, a)),
            w2: params.add("decoder.attention.w2", Matrix::zeros(a, 1)),
        };
        let out_weight = params.add("decoder.out_proj.weight", Matrix::zeros(out_in, dec_vocab));
        let out_bias = params.add("decoder.out_proj.bias", Matrix::zeros(1, dec_vocab));
        let focus = (config.placement == AttentionPlacement::FullFocus).then(|| {
            (params.add("decoder.focus.weight", Matrix::zeros(h + e, h)), params.add("decoder.focus.bias", Matrix::zeros(1, h)))
        });
        let combine = (config.placement == AttentionPlacement::PostRnnCombine).then(|| {
            (params.add("decoder.combine.weight", Matrix::zeros(2 * h, h)), params.add("decoder.combine.bias", Matrix::zeros(1, h)))
        });
        let slots = ModelSlots { enc_embedding, encoder, dec_embedding, decoder, attention, out_weight, out_bias, focus, combine };
        Seq2SeqModel { config, mode, params, slots }
    }

    /// Uniform weights in `±init_scale`, zero biases.
    pub fn new(config: ModelConfig, mode: Mode, rng: &mut Rng) -> Self {
        let mut model = Self::empty(config, mode);
        let s = config.init_scale;
        let h = config.hidden as f64;
        for (_, p) in model.params.iter_mut() {
            let embedding = p.name.ends_with(".embedding");
            if let (Some(std), true) = (config.embed_std, embedding) {
                p.value.data_mut().iter_mut().for_each(|w| *w = rng.normal(0.0, std));
                continue;
            }
            let scale = match (config.fan_in_init, is_bias(&p.name)) {
                (false, true) => continue,
                (false, false) => s,
                // GRU biases use the hidden size as fan-in.
                (true, true) if p.name.contains(".gru.") => 1.0 / h.sqrt(),
                (true, _) if p.name.contains(".gru.") => 1.0 / h.sqrt(),
                (true, true) => 1.0 / (fan_in_of_bias(&p.name, &config) as f64).sqrt(),
                (true, false) => 1.0 / (p.value.rows() as f64).sqrt(),
            };
            p.value.data_mut().iter_mut().for_each(|w| *w = rng.uniform(-scale, scale));
        }
        model
    }

    /// Rebuilds the model with `mode` but identical parameters.
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.params.iter().map(|(_, p)| p.name.clone()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.params.find(name).map(|id| &self.params.get(id).value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.find(name).map(|id| &mut self.params.get_mut(id).value)
    }

    pub fn unfreeze_all(&mut self) {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            self.params.set_frozen(id, false);
        }
    }

    /// Every tensor slice incident to a hidden unit. Context vectors are
    /// weighted sums of encoder states, so weights reading the context
    /// belong to encoder units.
    pub fn incidences(&self) -> Vec<Incidence> {
        let (e, h) = (self.config.embed_dim, self.config.hidden);
        let mut out = Vec::new();
        let mut add = |tensor: &str, axis: Axis, offset: usize, layer: Layer| {
            out.push(Incidence { tensor: tensor.to_string(), axis, offset, layer, bias: is_bias(tensor) })
        };
        for (layer, prefix) in [(Layer::Encoder, "encoder.gru"), (Layer::Decoder, "decoder.gru")] {
            for g in ["z", "r", "h"] {
                add(&format!("{prefix}.W_i{g}"), Axis::Col, 0, layer);
                add(&format!("{prefix}.W_h{g}"), Axis::Col, 0, layer);
                add(&format!("{prefix}.W_h{g}"), Axis::Row, 0, layer);
                add(&format!("{prefix}.b_{g}"), Axis::Col, 0, layer);
            }
        }
        add("decoder.attention.W1_key", Axis::Row, 0, Layer::Encoder);
        add("decoder.attention.W1_query", Axis::Row, 0, Layer::Decoder);
        match self.config.placement {
            AttentionPlacement::PostRnnCombine => {
                add("decoder.combine.weight", Axis::Row, 0, Layer::Decoder);
                add("decoder.combine.weight", Axis::Row, h, Layer::Encoder);
            }
            _ => add("decoder.out_proj.weight", Axis::Row, 0, Layer::Decoder),
        }
        match self.config.placement {
            AttentionPlacement::PostRnn => add("decoder.out_proj.weight", Axis::Row, h, Layer::Encoder),
            AttentionPlacement::PostRnnCombine => {}
            AttentionPlacement::PreRnn => {
                for g in ["z", "r", "h"] {
                    add(&format!("decoder.gru.W_i{g}"), Axis::Row, e, Layer::Encoder);
                }
            }
            AttentionPlacement::FullFocus => {
                for g in ["z", "r", "h"] {
                    add(&format!("decoder.gru.W_i{g}"), Axis::Row, 0, Layer::Encoder);
                }
                add("decoder.focus.weight", Axis::Row, 0, Layer::Encoder);
                add("decoder.focus.weight", Axis::Col, 0, Layer::Encoder);
                add("decoder.focus.bias", Axis::Col, 0, Layer::Encoder);
            }
        }
        out
    }

    /// Runs the encoder over a batch of equal-length token sequences.
    pub fn encode(&self, tape: &mut Tape<'_>, inputs: &[Vec<usize>]) -> Vec<GruOut> {
        let n = inputs[0].len();
        let emb = tape.param(self.slots.enc_embedding);
        let mut h = tape.input(Matrix::zeros(inputs.len(), self.config.hidden));
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let col: Vec<usize> = inputs.iter().map(|seq| seq[i]).collect();
            let x = tape.gather(emb, &col);
            let step = self.slots.encoder.step(tape, x, h);
            h = step.h;
            out.push(step);
        }
        out
    }

    /// Projects encoder states through the key half of the scorer.
    pub fn attention_keys(&self, tape: &mut Tape<'_>, states: &[Var]) -> Vec<Var> {
        let wk = tape.param(self.slots.attention.w_key);
        states.iter().map(|&h| tape.matmul(h, wk)).collect()
    }

    /// Attention weights `[B x N]` and context `[B x H]` for query `s`.
    pub fn attend(&self, tape: &mut Tape<'_>, s: Var, states: &[Var], keys: &[Var]) -> (Var, Var) {
        let a = &self.slots.attention;
        let (wq, b1, w2) = (tape.param(a.w_query), tape.param(a.b1), tape.param(a.w2));
        let q = tape.matmul(s, wq);
        let scores: Vec<Var> = keys
            .iter()
            .map(|&k| {
                let pre = tape.add(q, k);
                let pre = tape.add_row(pre, b1);
                let act = tape.tanh(pre);
                tape.matmul(act, w2)
            })
            .collect();
        let cat = tape.concat_cols(&scores);
        let weights = tape.softmax_rows(cat);
        let parts: Vec<Var> = states
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let col = tape.col_slice(weights, i);
                tape.scale_rows(h, col)
            })
            .collect();
        let context = if parts.len() == 1 { parts[0] } else { tape.add_many(&parts) };
        (weights, context)
    }

    /// One decoder step from the previous tokens and state.
    pub fn decode_step(
        &self,
        tape: &mut Tape<'_>,
        prev_tokens: &[usize],
        s_prev: Var,
        states: &[Var],
        keys: &[Var],
    ) -> DecoderStepVars {
        let emb = tape.param(self.slots.dec_embedding);
        let x_emb = tape.gather(emb, prev_tokens);
        let (gru, attention, context, readout) = match self.config.placement {
            AttentionPlacement::PostRnn => {
                let gru = self.slots.decoder.step(tape, x_emb, s_prev);
                let (attention, context) = self.attend(tape, gru.h, states, keys);
                let readout = tape.concat_cols(&[gru.h, context]);
                (gru, attention, context, readout)
            }
            AttentionPlacement::PreRnn => {
                let (attention, context) = self.attend(tape, s_prev, states, keys);
                let x = tape.concat_cols(&[x_emb, context]);
                let gru = self.slots.decoder.step(tape, x, s_prev);
                (gru, attention, context, gru.h)
            }
            AttentionPlacement::FullFocus => {
                let (attention, context) = self.attend(tape, s_prev, states, keys);
                let (fw, fb) = self.slots.focus.expect("full-focus model has focus weights");
                let (fw, fb) = (tape.param(fw), tape.param(fb));
                let cat = tape.concat_cols(&[context, x_emb]);
                let merged = tape.matmul(cat, fw);
                let merged = tape.add_row(merged, fb);
                let merged = tape.relu(merged);
                let x = tape.mul(context, merged);
                let gru = self.slots.decoder.step(tape, x, s_prev);
                (gru, attention, context, gru.h)
            }
            AttentionPlacement::PostRnnCombine => {
                let gru = self.slots.decoder.step(tape, x_emb, s_prev);
                let (attention, context) = self.attend(tape, gru.h, states, keys);
                let (cw, cb) = self.slots.combine.expect("combine model has combine weights");
                let (cw, cb) = (tape.param(cw), tape.param(cb));
                let cat = tape.concat_cols(&[gru.h, context]);
                let pre = tape.matmul(cat, cw);
                let pre = tape.add_row(pre, cb);
                (gru, attention, context, tape.tanh(pre))
            }
        };
        let (w, b) = (tape.param(self.slots.out_weight), tape.param(self.slots.out_bias));
        let logits = tape.matmul(readout, w);
        let logits = tape.add_row(logits, b);
        let probs = tape.softmax_rows(logits);
        DecoderStepVars { gru, attention, context, probs }
    }

    /// Batched forward pass over examples of identical shape.
    pub fn forward(&self, tape: &mut Tape<'_>, batch: &[&Example], decoding: Decoding) -> ForwardPass {
        let inputs: Vec<Vec<usize>> = batch.iter().map(|e| e.input_indices()).collect();
        let targets: Vec<Vec<usize>> = batch.iter().map(|e| e.target_indices()).collect();
        let steps = targets[0].len();
        debug_assert!(inputs.iter().all(|i| i.len() == inputs[0].len()));
        debug_assert!(targets.iter().all(|t| t.len() == steps));
        self.forward_indices(tape, &inputs, steps, decoding, Some(&targets))
    }

    pub(crate) fn forward_indices(
        &self,
        tape: &mut Tape<'_>,
        inputs: &[Vec<usize>],
        steps: usize,
        decoding: Decoding,
        targets: Option<&[Vec<usize>]>,
    ) -> ForwardPass {
        let encoder = self.encode(tape, inputs);
        let states: Vec<Var> = encoder.iter().map(|o| o.h).collect();
        let keys = self.attention_keys(tape, &states);
        let rows = inputs.len();
        let mut s = *states.last().expect("non-empty input");
        let mut prev = vec![DecToken::Sos.index(); rows];
        let mut decoder = Vec::with_capacity(steps);
        let mut predictions = vec![Vec::with_capacity(steps); rows];
        for t in 0..steps {
            let step = self.decode_step(tape, &prev, s, &states, &keys);
            s = step.gru.h;
            let probs = tape.value(step.probs);
            for (r, pred) in predictions.iter_mut().enumerate() {
                pred.push(probs.argmax_row(r));
            }
            prev = match (decoding, targets) {
                (Decoding::TeacherForced, Some(tg)) => tg.iter().map(|seq| seq[t]).collect(),
                _ => predictions.iter().map(|p| p[t]).collect(),
            };
            decoder.push(step);
        }
        ForwardPass { encoder, decoder, predictions }
    }

    /// Token NLL averaged over decoder steps, plus `guidance_weight` times
    /// the attention cross-entropy against the diagonal targets (omitted
    /// entirely when the weight is zero).
    pub fn loss(&self, tape: &mut Tape<'_>, fwd: &ForwardPass, batch: &[&Example], guidance_weight: f64) -> LossVars {
        let steps = fwd.decoder.len();
        let inv_t = 1.0 / steps as f64;
        let mut token_terms = Vec::with_capacity(steps);
        let mut attn_terms = Vec::with_capacity(steps);
        for (t, step) in fwd.decoder.iter().enumerate() {
            let tgt: Vec<usize> = batch.iter().map(|e| e.target[t].index()).collect();
            token_terms.push(tape.nll(step.probs, &tgt));
            if guidance_weight != 0.0 {
                let at: Vec<usize> = batch.iter().map(|e| e.attention[t]).collect();
                attn_terms.push(tape.nll(step.attention, &at));
            }
        }
        let token_sum = tape.add_many(&token_terms);
        let token = tape.scale(token_sum, inv_t);
        if attn_terms.is_empty() {
            return LossVars { total: token, token, guidance: None };
        }
        let attn_sum = tape.add_many(&attn_terms);
        let guidance = tape.scale(attn_sum, inv_t);
        let weighted = tape.scale(guidance, guidance_weight);
        let total = tape.add(token, weighted);
        LossVars { total, token, guidance: Some(guidance) }
    }

    /// Encoder states for a single token sequence.
    pub fn encode_tokens(&self, tokens: &[usize]) -> Result<Vec<GruStep>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Shape("empty input sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.enc_vocab) {
            return Err(ModelError::UnknownToken(bad));
        }
        let mut tape = Tape::new(&self.params);
        let outs = self.encode(&mut tape, &[tokens.to_vec()]);
        Ok(outs
            .iter()
            .map(|o| GruStep { h: tape.value(o.h).clone(), z: tape.value(o.z).clone(), r: tape.value(o.r).clone() })
            .collect())
    }

    /// Greedy decode of `steps` tokens for one input sequence.
    pub fn greedy_decode(&self, tokens: &[usize], steps: usize) -> Result<Vec<usize>, ModelError> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.enc_vocab) {
            return Err(ModelError::UnknownToken(bad));
        }
        let mut tape = Tape::new(&self.params);
        let fwd = self.forward_indices(&mut tape, &[tokens.to_vec()], steps, Decoding::Greedy, None);
        Ok(fwd.predictions.into_iter().next().unwrap_or_default())
    }
}

/// Attention-guidance loss `(1/T) Σ_t Σ_i -target[t,i] ln pred[t,i]` for
/// `T x N` row-stochastic matrices; the log argument is floored.
pub fn ag_loss(predicted: &Matrix, target: &Matrix) -> Result<f64, ModelError> {
    if predicted.shape() != target.shape() || predicted.rows() == 0 {
        return Err(ModelError::Shape(format!("ag_loss on {:?} and {:?}", predicted.shape(), target.shape())));
    }
    let total: f64 = predicted
        .data()
        .iter()
        .zip(target.data())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(PROB_FLOOR).ln())
        .sum();
    Ok(total / predicted.rows() as f64)
}

/// Diagonal target matrix: row `t` is one-hot at `positions[t]`.
pub fn attention_targets(positions: &[usize], n_inputs: usize) -> Matrix {
    let mut m = Matrix::zeros(positions.len(), n_inputs);
    for (t, &i) in positions.iter().enumerate() {
        m.set(t, i, 1.0);
    }
    m
}

/// Which recurrent layer owns a hidden unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Encoder,
    Decoder,
}

impl Layer {
    pub const BOTH: [Layer; 2] = [Layer::Encoder, Layer::Decoder];

    pub fn tag(self) -> &'static str {
        match self {
            Layer::Encoder => "encoder",
            Layer::Decoder => "decoder",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Row,
    Col,
}

/// A block of `hidden` consecutive rows or columns of one tensor whose
/// `j`-th entry is wired to unit `j` of `layer`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Incidence {
    pub tensor: String,
    pub axis: Axis,
    pub offset: usize,
    pub layer: Layer,
    pub bias: bool,
}

fn fan_in_of_bias(name: &str, c: &ModelConfig) -> usize {
    match name {
        "decoder.attention.b1" => 2 * c.hidden,
        "decoder.focus.bias" => c.hidden + c.embed_dim,
        "decoder.combine.bias" => 2 * c.hidden,
        "decoder.out_proj.bias" if c.placement == AttentionPlacement::PostRnn => 2 * c.hidden,
        _ => c.hidden,
    }
}

pub fn is_bias(name: &str) -> bool {
    name.ends_with(".bias") || name.rsplit('.').next().is_some_and(|s| s.starts_with("b_") || s == "b1")
}
