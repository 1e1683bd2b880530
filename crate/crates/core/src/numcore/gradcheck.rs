use super::{Gradients, ParamId, ParamSet, Rng};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<WorstEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstEntry {
    pub name: String,
    /// Flat (row-major) index into the parameter.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`. The floor keeps round-off in the
/// central difference from dominating on near-zero gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Checks `analytic` against central differences of `loss` at up to
/// `samples` randomly chosen entries of the unfrozen parameters in `ids`
/// (every unfrozen parameter when `ids` is empty). When the candidate pool
/// holds no more than `samples` entries all of them are checked.
pub fn grad_check<F>(
    params: &mut ParamSet,
    analytic: &Gradients,
    mut loss: F,
    ids: &[ParamId],
    eps: f64,
    samples: usize,
    rng: &mut Rng,
) -> GradCheckReport
where
    F: FnMut(&ParamSet) -> f64,
{
    let pool: Vec<ParamId> = if ids.is_empty() { params.ids().collect() } else { ids.to_vec() };
    let mut entries: Vec<(ParamId, usize)> = Vec::new();
    for &id in &pool {
        let p = params.get(id);
        if !p.frozen {
            entries.extend((0..p.value.len()).map(|i| (id, i)));
        }
    }
    if entries.len() > samples {
        let picks = rng.sample_indices(entries.len(), samples);
        entries = picks.into_iter().map(|k| entries[k]).collect();
    }

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for (id, i) in entries {
        let orig = params.get(id).value.data()[i];
        params.get_mut(id).value.data_mut()[i] = orig + eps;
        let plus = loss(params);
        params.get_mut(id).value.data_mut()[i] = orig - eps;
        let minus = loss(params);
        params.get_mut(id).value.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get(id).data()[i];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(WorstEntry { name: params.get(id).name.clone(), index: i, analytic: a, numeric });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::super::{Matrix, Tape};
    use super::*;

    #[test]
    fn empty_parameter_set_reports_zero() {
        let mut ps = ParamSet::new();
        let g = Gradients::zeros_like(&ps);
        let r = grad_check(&mut ps, &g, |_| 0.0, &[], 1e-5, 200, &mut Rng::seeded(1));
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn cubic_loss_passes() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Matrix::from_rows(&[vec![0.4, -0.9, 1.3]]));
        let loss_of = |ps: &ParamSet| -> (f64, Gradients) {
            let mut t = Tape::new(ps);
            let v = t.param(w);
            let sq = t.mul(v, v);
            let cube = t.mul(sq, v);
            let l = t.sum_all(cube);
            (t.scalar(l), t.backward(l).unwrap())
        };
        let (_, g) = loss_of(&ps);
        let r = grad_check(&mut ps, &g, |p| loss_of(p).0, &[], 1e-5, 200, &mut Rng::seeded(2));
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Matrix::from_rows(&[vec![0.4, -0.9]]));
        let mut g = Gradients::zeros_like(&ps);
        g.get_mut(w).data_mut().copy_from_slice(&[1.0, 1.0]);
        let r = grad_check(&mut ps, &g, |p| p.get(w).value.data().iter().map(|x| 2.0 * x).sum(), &[], 1e-5, 10, &mut Rng::seeded(3));
        assert!(r.max_rel_error > 0.4);
    }
}
