//! Diagnostic classifiers: multinomial logistic regression on activations,
//! functional groups and top-weight overlap.

use serde::{Deserialize, Serialize};

use crate::numcore::{matmul, AdamConfig, AdamState, Gradients, Matrix, ParamSet, Rng};

use super::AnalysisError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub max_iterations: usize,
    /// Stop once the full-batch loss changes by less than this.
    pub tolerance: f64,
    pub lr: f64,
    /// Share of rows held out for scoring.
    pub test_fraction: f64,
    pub seed: u64,
    /// Fraction of the full accuracy a functional group must reach.
    pub group_ratio: f64,
    /// Prefix sizes are tried one by one up to here, then in steps of
    /// `coarse_step`.
    pub fine_prefix_limit: usize,
    pub coarse_step: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            max_iterations: 5000,
            tolerance: 1e-7,
            lr: 0.01,
            test_fraction: 0.2,
            seed: 1,
            group_ratio: 0.95,
            fine_prefix_limit: 64,
            coarse_step: 16,
        }
    }
}

/// Rows of activations with one class label each.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeData {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl ProbeData {
    pub fn new(inputs: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self, AnalysisError> {
        if inputs.rows() != labels.len() {
            return Err(AnalysisError::Probe(format!("{} rows but {} labels", inputs.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(AnalysisError::Probe(format!("label {bad} outside {n_classes} classes")));
        }
        Ok(ProbeData { inputs, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.n_classes];
        self.labels.iter().for_each(|&l| seen[l] = true);
        seen.into_iter().filter(|&s| s).count()
    }

    fn rows(&self, idx: &[usize]) -> ProbeData {
        ProbeData { inputs: self.inputs.select_rows(idx), labels: idx.iter().map(|&i| self.labels[i]).collect(), n_classes: self.n_classes }
    }

    pub fn columns(&self, cols: &[usize]) -> ProbeData {
        ProbeData { inputs: self.inputs.select_columns(cols), labels: self.labels.clone(), n_classes: self.n_classes }
    }

    /// Seeded train/test partition of the rows.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (ProbeData, ProbeData) {
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let test_idx = Rng::named(seed, "probe-split").sample_indices(self.len(), n_test);
        let train_idx: Vec<usize> = (0..self.len()).filter(|i| test_idx.binary_search(i).is_err()).collect();
        (self.rows(&train_idx), self.rows(&test_idx))
    }

    /// Same inputs with labels permuted.
    pub fn shuffled_labels(&self, seed: u64) -> ProbeData {
        let mut labels = self.labels.clone();
        Rng::named(seed, "label-shuffle").shuffle(&mut labels);
        ProbeData { labels, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// `[n_units x n_classes]`.
    pub weights: Matrix,
    pub bias: Matrix,
    pub iterations: usize,
    pub final_loss: f64,
}

impl LinearProbe {
    fn logits(&self, inputs: &Matrix) -> Matrix {
        let mut z = matmul(inputs, &self.weights).expect("probe width matches inputs");
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        z
    }

    pub fn predict(&self, inputs: &Matrix) -> Vec<usize> {
        let z = self.logits(inputs);
        (0..z.rows()).map(|r| z.argmax_row(r)).collect()
    }

    pub fn accuracy(&self, data: &ProbeData) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = self.predict(&data.inputs).iter().zip(&data.labels).filter(|(p, l)| p == l).count();
        hits as f64 / data.len() as f64
    }

    /// Units ordered by summed absolute weight across classes, strongest
    /// first (ties keep the lower index first).
    pub fn unit_ranking(&self) -> Vec<usize> {
        let score: Vec<f64> = (0..self.weights.rows()).map(|u| self.weights.row(u).iter().map(|w| w.abs()).sum()).collect();
        let mut order: Vec<usize> = (0..score.len()).collect();
        order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
        order
    }
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn loss_and_dlogits(z: &mut Matrix, labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let mut loss = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let row = z.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        loss -= row[l].max(crate::numcore::PROB_FLOOR).ln();
        row[l] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n);
    }
    loss / n
}

/// Full-batch Adam on the unregularized multinomial logistic loss, from
/// zero weights, until the loss changes by less than the tolerance.
pub fn train_probe(data: &ProbeData, config: &ProbeConfig) -> Result<LinearProbe, AnalysisError> {
    if data.is_empty() {
        return Err(AnalysisError::Probe("no probe rows".into()));
    }
    if data.distinct_labels() < 2 {
        return Err(AnalysisError::Probe("labels are all one class".into()));
    }
    let (d, c) = (data.inputs.cols(), data.n_classes);
    let mut params = ParamSet::new();
    let w = params.add("weights", Matrix::zeros(d, c));
    let b = params.add("bias", Matrix::zeros(1, c));
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(config.lr));
    let xt = data.inputs.transpose();
    let mut probe = LinearProbe { weights: Matrix::zeros(d, c), bias: Matrix::zeros(1, c), iterations: 0, final_loss: f64::INFINITY };
    let mut prev = f64::INFINITY;
    for it in 1..=config.max_iterations {
        probe.weights = params.get(w).value.clone();
        probe.bias = params.get(b).value.clone();
        let mut dz = probe.logits(&data.inputs);
        let loss = loss_and_dlogits(&mut dz, &data.labels);
        probe.iterations = it - 1;
        probe.final_loss = loss;
        if !loss.is_finite() {
            return Err(AnalysisError::Probe("probe loss diverged".into()));
        }
        if (prev - loss).abs() < config.tolerance {
            return Ok(probe);
        }
        prev = loss;
        let mut grads = Gradients::zeros_like(&params);
        *grads.get_mut(w) = matmul(&xt, &dz).expect("shapes agree");
        let gb = grads.get_mut(b);
        for r in 0..dz.rows() {
            for (acc, v) in gb.data_mut().iter_mut().zip(dz.row(r)) {
                *acc += v;
            }
        }
        adam.step(&mut params, &grads).expect("probe gradients are finite");
    }
    probe.weights = params.get(w).value.clone();
    probe.bias = params.get(b).value.clone();
    probe.iterations = config.max_iterations;
    let mut z = probe.logits(&data.inputs);
    probe.final_loss = loss_and_dlogits(&mut z, &data.labels);
    Ok(probe)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task: String,
    pub n_classes: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Held-out accuracy of the probe on all units.
    pub full_accuracy: f64,
    /// Smallest ranked prefix reaching `ratio * full_accuracy`.
    pub group: Vec<usize>,
    pub group_accuracy: f64,
    pub group_size: usize,
    /// `(prefix size, held-out accuracy)` for every prefix tried.
    pub prefix_curve: Vec<(usize, f64)>,
    pub top_weight_overlap: Option<f64>,
}

impl ProbeReport {
    /// Share of prefix steps whose accuracy does not drop.
    pub fn monotone_share(&self) -> f64 {
        if self.prefix_curve.len() < 2 {
            return 1.0;
        }
        let ok = self.prefix_curve.windows(2).filter(|w| w[1].1 >= w[0].1).count();
        ok as f64 / (self.prefix_curve.len() - 1) as f64
    }
}

fn prefix_sizes(n: usize, config: &ProbeConfig) -> Vec<usize> {
    let fine = config.fine_prefix_limit.min(n);
    let mut sizes: Vec<usize> = (1..=fine).collect();
    let mut k = fine;
    while k < n {
        k = (k + config.coarse_step.max(1)).min(n);
        sizes.push(k);
    }
    sizes
}

/// Trains the full probe, ranks its units and retrains restricted probes
/// on growing prefixes until one reaches the ratio of the full accuracy.
pub fn functional_group(task: &str, data: &ProbeData, config: &ProbeConfig) -> Result<(LinearProbe, ProbeReport), AnalysisError> {
    let (train, test) = data.split(config.test_fraction, config.seed);
    let probe = train_probe(&train, config)?;
    let full_accuracy = probe.accuracy(&test);
    let ranking = probe.unit_ranking();
    let target = config.group_ratio * full_accuracy;
    let mut curve = Vec::new();
    let mut chosen = None;
    for k in prefix_sizes(ranking.len(), config) {
        let cols = &ranking[..k];
        let acc = if k == ranking.len() { full_accuracy } else { train_probe(&train.columns(cols), config)?.accuracy(&test.columns(cols)) };
        curve.push((k, acc));
        if acc >= target {
            chosen = Some((k, acc));
            break;
        }
    }
    let (size, group_accuracy) = chosen.unwrap_or((ranking.len(), full_accuracy));
    let report = ProbeReport {
        task: task.to_string(),
        n_classes: data.n_classes,
        train_rows: train.len(),
        test_rows: test.len(),
        full_accuracy,
        group: ranking[..size].to_vec(),
        group_accuracy,
        group_size: size,
        prefix_curve: curve,
        top_weight_overlap: None,
    };
    Ok((probe, report))
}

/// Share of `group` inside the `ceil(frac * n)` strongest units.
pub fn top_weight_overlap(group: &[usize], strengths: &[f64], frac: f64) -> f64 {
    if group.is_empty() {
        return 0.0;
    }
    let top = top_units(strengths, frac);
    group.iter().filter(|u| top.contains(u)).count() as f64 / group.len() as f64
}

/// Indices of the `ceil(frac * n)` largest strengths (ties: lower index).
pub fn top_units(strengths: &[f64], frac: f64) -> Vec<usize> {
    let k = ((frac * strengths.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..strengths.len()).collect();
    order.sort_by(|&a, &b| strengths[b].total_cmp(&strengths[a]).then(a.cmp(&b)));
    order.truncate(k.min(strengths.len()));
    order
}
