use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

/// Adam with bias correction. State is keyed by parameter name, so a step may
/// update any subset of the parameters it has seen before.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    states: BTreeMap<String, AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    pub fn state(&self, name: &str) -> Option<&AdamState<T>> {
        self.states.get(name)
    }

    /// Applies one update to every given parameter and zeroes its gradient.
    ///
    /// All gradients are checked before any parameter is modified.
    pub fn step<'a, I>(&mut self, params: I) -> Result<(), AutodiffError>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor<T>)>,
    {
        let mut params: Vec<(&str, &mut Tensor<T>)> = params.into_iter().collect();
        for (name, p) in &params {
            if p.grad().is_none() {
                return Err(AutodiffError::MissingGrad(name.to_string()));
            }
            if let Some(s) = self.states.get(*name) {
                if s.m.len() != p.numel() {
                    return Err(AutodiffError::StateMismatch {
                        name: name.to_string(),
                        state: s.m.len(),
                        param: p.numel(),
                    });
                }
            }
        }

        let lr = T::of(self.config.lr);
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let eps = T::of(self.config.epsilon);
        for (name, p) in params.iter_mut() {
            let n = p.numel();
            let state = self.states.entry(name.to_string()).or_insert_with(|| AdamState {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                t: 0,
            });
            state.t += 1;
            let c1 = T::one() - b1.powi(state.t as i32);
            let c2 = T::one() - b2.powi(state.t as i32);
            let (grad, values) = p.grad_and_values_mut();
            let grad = grad.expect("checked above");
            for i in 0..n {
                let g = grad[i];
                state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
                state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                grad[i] = T::zero();
            }
        }
        Ok(())
    }
}
