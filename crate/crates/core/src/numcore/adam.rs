use serde::{Deserialize, Serialize};

use super::{Gradients, Matrix, NumError, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// First/second moment estimates for every parameter of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        AdamState { config, t: 0, m: zeros(), v: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. Frozen parameters (and their moment
    /// estimates) are left untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<(), NumError> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(NumError::Usage(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (id, p) in params.iter() {
            let g = grads.get(id);
            if g.shape() != p.value.shape() || self.m[id.index()].shape() != p.value.shape() {
                return Err(NumError::Shape { op: "adam_step", left: p.value.shape(), right: g.shape() });
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (id, p) in params.iter_mut() {
            if p.frozen {
                continue;
            }
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(values: Vec<f64>) -> (ParamSet, super::super::ParamId) {
        let mut ps = ParamSet::new();
        let n = values.len();
        let id = ps.add("p", Matrix::from_vec(1, n, values).unwrap());
        (ps, id)
    }

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let (mut ps, id) = one_param(vec![0.5, -1.0, 2.0]);
        let before = ps.get(id).value.clone();
        let mut st = AdamState::new(&ps, AdamConfig::default());
        let g = Gradients::zeros_like(&ps);
        st.step(&mut ps, &g).unwrap();
        assert_eq!(ps.get(id).value, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut ps, id) = one_param(vec![0.5, -1.0, 2.0, 0.0]);
        let before = ps.get(id).value.clone();
        let mut g = Gradients::zeros_like(&ps);
        g.get_mut(id).data_mut().copy_from_slice(&[0.3, -2.0, 0.1, -0.7]);
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(&ps, cfg);
        st.step(&mut ps, &g).unwrap();
        for i in 0..4 {
            let delta = ps.get(id).value.data()[i] - before.data()[i];
            let expect = -cfg.lr * g.get(id).data()[i].signum();
            assert!(((delta - expect) / expect).abs() < 1e-6, "{delta} vs {expect}");
        }
    }

    #[test]
    fn frozen_parameter_is_bit_identical() {
        let (mut ps, id) = one_param(vec![0.25, -0.75]);
        ps.set_frozen(id, true);
        let before = ps.get(id).value.clone();
        let mut g = Gradients::zeros_like(&ps);
        g.get_mut(id).data_mut().copy_from_slice(&[1.0, -3.0]);
        let mut st = AdamState::new(&ps, AdamConfig::default());
        for _ in 0..50 {
            st.step(&mut ps, &g).unwrap();
        }
        assert_eq!(ps.get(id).value, before);
        assert_eq!(st.step_count(), 50);
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let (mut ps, id) = one_param(vec![0.0; 3]);
        let mut st = AdamState::new(&ps, AdamConfig::default());
        let mut g = Gradients::zeros_like(&ps);
        for k in 0..10 {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            g.get_mut(id).data_mut().copy_from_slice(&[s, -2.0 * s, 0.5]);
            st.step(&mut ps, &g).unwrap();
        }
        assert!(st.v.iter().all(|v| v.data().iter().all(|&x| x >= 0.0)));
    }
}
