use std::collections::BTreeMap;

use crate::error::{NdError, Result};
use crate::params::ParamStore;

/// Adam optimizer state with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .iter()
            .map(|(k, t)| (k.to_string(), vec![0.0; t.len()]))
            .collect();
        Self {
            second_moment: zeros.clone(),
            first_moment: zeros,
            step_count: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Applies one update to every optimized parameter. Fails before touching
    /// anything if a parameter is missing or has no gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        for name in self.first_moment.keys() {
            let t = params.get(name).ok_or_else(|| NdError::MissingParam(name.clone()))?;
            if t.grad.is_none() {
                return Err(NdError::MissingGrad(name.clone()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, m) in self.first_moment.iter_mut() {
            let v = self.second_moment.get_mut(name).expect("moments share keys");
            let p = params.get_mut(name).expect("checked above");
            let grad = p.grad.as_ref().expect("checked above");
            for i in 0..m.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
