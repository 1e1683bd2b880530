use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numcore::{AdamConfig, AdamState, Gradients, Rng, Tape};
use crate::taskgen::{DatasetBundle, Example};

use super::{Decoding, Mode, Seq2SeqModel, TrainError};

pub const MAX_EPOCHS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of the attention term; only applied to guided models.
    pub guidance_weight: f64,
    pub seed: u64,
    /// Share of the training examples carved out for model selection.
    pub validation_fraction: f64,
    /// Stop after this many epochs without a new best checkpoint.
    pub patience: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_epochs: MAX_EPOCHS,
            lr: 1e-3,
            batch_size: 1,
            guidance_weight: 1.0,
            seed: 1,
            validation_fraction: 0.1,
            patience: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.max_epochs == 0 || self.max_epochs > MAX_EPOCHS {
            return bad("max_epochs must be in 1..=100");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if self.guidance_weight < 0.0 {
            return bad("guidance_weight must be non-negative");
        }
        Ok(())
    }

    /// Attention-loss weight used for a model of `mode`.
    pub fn weight_for(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Guided => self.guidance_weight,
            Mode::Baseline => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub token_loss: f64,
    pub guidance_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation accuracy (ties: lower loss).
    pub model: Seq2SeqModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Splits the training set into fit and validation parts, seeded.
pub fn carve_validation<'a>(train: &'a [Example], fraction: f64, seed: u64) -> (Vec<&'a Example>, Vec<&'a Example>) {
    let n_val = (train.len() as f64 * fraction).round() as usize;
    let picks = Rng::named(seed, "validation").sample_indices(train.len(), n_val);
    let mut fit = Vec::with_capacity(train.len() - picks.len());
    let mut val = Vec::with_capacity(picks.len());
    for (i, ex) in train.iter().enumerate() {
        if picks.binary_search(&i).is_ok() {
            val.push(ex);
        } else {
            fit.push(ex);
        }
    }
    (fit, val)
}

/// Groups examples by sequence shape so each batch is rectangular.
fn buckets<'a>(examples: &[&'a Example]) -> Vec<Vec<&'a Example>> {
    let mut map: BTreeMap<(usize, usize), Vec<&'a Example>> = BTreeMap::new();
    for &ex in examples {
        map.entry((ex.input.len(), ex.target.len())).or_default().push(ex);
    }
    map.into_values().collect()
}

fn epoch_batches<'a>(examples: &[&'a Example], batch_size: usize, rng: &mut Rng) -> Vec<Vec<&'a Example>> {
    let mut batches = Vec::new();
    for mut bucket in buckets(examples) {
        rng.shuffle(&mut bucket);
        batches.extend(bucket.chunks(batch_size).map(<[_]>::to_vec));
    }
    rng.shuffle(&mut batches);
    batches
}

/// Sequence accuracy: share of examples whose greedy decode reproduces the
/// full target, EOS included.
pub fn evaluate(model: &Seq2SeqModel, examples: &[Example]) -> f64 {
    let refs: Vec<&Example> = examples.iter().collect();
    evaluate_refs(model, &refs)
}

pub fn evaluate_refs(model: &Seq2SeqModel, examples: &[&Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let correct: usize = correct_flags(model, examples).into_iter().filter(|&c| c).count();
    correct as f64 / examples.len() as f64
}

/// Per-example correctness, in input order.
pub fn correct_flags(model: &Seq2SeqModel, examples: &[&Example]) -> Vec<bool> {
    let mut flags = vec![false; examples.len()];
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        groups.entry((ex.input.len(), ex.target.len())).or_default().push(i);
    }
    for idx in groups.into_values() {
        for chunk in idx.chunks(128) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| examples[i]).collect();
            let mut tape = Tape::new(&model.params);
            let fwd = model.forward(&mut tape, &batch, Decoding::Greedy);
            for (k, &i) in chunk.iter().enumerate() {
                flags[i] = fwd.predictions[k] == batch[k].target_indices();
            }
        }
    }
    flags
}

/// Teacher-forced loss averaged over examples.
pub fn mean_loss(model: &Seq2SeqModel, examples: &[&Example], guidance_weight: f64) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for bucket in buckets(examples) {
        for chunk in bucket.chunks(128) {
            let mut tape = Tape::new(&model.params);
            let fwd = model.forward(&mut tape, chunk, Decoding::TeacherForced);
            let loss = model.loss(&mut tape, &fwd, chunk, guidance_weight);
            total += tape.scalar(loss.total) * chunk.len() as f64;
        }
    }
    total / examples.len() as f64
}

/// Loss and gradients of one batch.
pub fn batch_gradients(model: &Seq2SeqModel, batch: &[&Example], guidance_weight: f64) -> Result<(f64, f64, f64, Gradients), TrainError> {
    let mut tape = Tape::new(&model.params);
    let fwd = model.forward(&mut tape, batch, Decoding::TeacherForced);
    let loss = model.loss(&mut tape, &fwd, batch, guidance_weight);
    let total = tape.scalar(loss.total);
    let token = tape.scalar(loss.token);
    let guidance = loss.guidance.map_or(0.0, |g| tape.scalar(g));
    let grads = tape.backward(loss.total)?;
    Ok((total, token, guidance, grads))
}

/// Trains on the bundle's train split, holding out a validation share for
/// model selection.
pub fn train(model: Seq2SeqModel, bundle: &DatasetBundle, config: &TrainingConfig) -> Result<TrainOutcome, TrainError> {
    let (fit, val) = carve_validation(&bundle.train, config.validation_fraction, config.seed);
    train_on(model, &fit, &val, config, None)
}

/// Training loop over explicit fit/validation sets. `grad_filter` runs on
/// every gradient before the optimizer sees it.
pub fn train_on(
    mut model: Seq2SeqModel,
    fit: &[&Example],
    val: &[&Example],
    config: &TrainingConfig,
    grad_filter: Option<&dyn Fn(&mut Gradients)>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if fit.is_empty() {
        return Err(TrainError::Config("no training examples".into()));
    }
    let weight = config.weight_for(model.mode);
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(config.lr));
    let mut rng = Rng::named(config.seed, "batches");
    let select_on: Vec<&Example> = if val.is_empty() { fit.to_vec() } else { val.to_vec() };

    let mut history = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, f64, usize, crate::numcore::ParamSet)> = None;
    for epoch in 1..=config.max_epochs {
        let (mut sum, mut tok, mut guid, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for (bi, batch) in epoch_batches(fit, config.batch_size, &mut rng).into_iter().enumerate() {
            let (total, token, guidance, mut grads) = batch_gradients(&model, &batch, weight)?;
            if !total.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: bi, loss: total });
            }
            if let Some(f) = grad_filter {
                f(&mut grads);
            }
            adam.step(&mut model.params, &grads)?;
            let n = batch.len() as f64;
            sum += total * n;
            tok += token * n;
            guid += guidance * n;
            seen += batch.len();
        }
        let n = seen as f64;
        let val_accuracy = evaluate_refs(&model, &select_on);
        let val_loss = mean_loss(&model, &select_on, weight);
        history.push(EpochRecord {
            epoch,
            train_loss: sum / n,
            token_loss: tok / n,
            guidance_loss: guid / n,
            val_accuracy,
            val_loss,
        });
        let improved = match &best {
            None => true,
            Some((acc, loss, _, _)) => val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss),
        };
        if improved {
            best = Some((val_accuracy, val_loss, epoch, model.params.clone()));
        }
        if let (Some(p), Some((_, _, be, _))) = (config.patience, &best) {
            if epoch - be >= p {
                break;
            }
        }
    }
    let (_, _, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainOutcome { model, history, best_epoch })
}
