//! Dense layers and the parameter-set plumbing shared by the models.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected length {expected}, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("mask is for k={expected}, input has k={actual}")]
    KMismatch { expected: usize, actual: usize },
    #[error("{0} needs a continuous mask")]
    BinaryMask(&'static str),
    #[error("occlusion ratio {0} outside [0, 1)")]
    InvalidRatio(f64),
    #[error("mixing weight {0} outside [0, 1]")]
    InvalidMix(f64),
    #[error("label {0} is not a class in {{0, 1}}")]
    InvalidLabel(u8),
    #[error("{0} contains non-finite values")]
    NonFinite(&'static str),
}

/// A model's trainable tensors, in a fixed order with stable names.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;
}

/// Fully connected layer `y = x W + b` with `W: [inputs, outputs]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Scalar> Linear<T> {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Self {
            weight: Tensor::new(vec![inputs, outputs], w).expect("non-empty layer").with_grad(),
            bias: Tensor::zeros(vec![outputs]).with_grad(),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![inputs, outputs]).with_grad(),
            bias: Tensor::zeros(vec![outputs]).with_grad(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LinearVars {
        LinearVars {
            weight: tape.leaf(&self.weight),
            bias: tape.leaf(&self.bias),
        }
    }

    pub fn forward(tape: &mut Tape<T>, vars: LinearVars, x: Var) -> Result<Var, AutodiffError> {
        tape.linear(x, vars.weight, vars.bias)
    }
}

/// Expands named layers into `prefix.layer.weight` / `prefix.layer.bias` entries.
pub(crate) fn layer_params<'a, T: Scalar>(prefix: &str, layers: Vec<(&str, &'a Linear<T>)>) -> Vec<(String, &'a Tensor<T>)> {
    layers
        .into_iter()
        .flat_map(|(name, l)| {
            [
                (format!("{prefix}.{name}.weight"), &l.weight),
                (format!("{prefix}.{name}.bias"), &l.bias),
            ]
        })
        .collect()
}

pub(crate) fn layer_params_mut<'a, T: Scalar>(
    prefix: &str,
    layers: Vec<(&str, &'a mut Linear<T>)>,
) -> Vec<(String, &'a mut Tensor<T>)> {
    layers
        .into_iter()
        .flat_map(|(name, l)| {
            [
                (format!("{prefix}.{name}.weight"), &mut l.weight),
                (format!("{prefix}.{name}.bias"), &mut l.bias),
            ]
        })
        .collect()
}

pub(crate) fn linear_vars(vars: &[LinearVars]) -> Vec<Var> {
    vars.iter().flat_map(|v| [v.weight, v.bias]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_is_bounded_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::<f64>::glorot(10, 6, &mut rng);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(l.weight.values().iter().all(|w| w.abs() <= bound));
        assert!(l.bias.values().iter().all(|&b| b == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(l, Linear::glorot(10, 6, &mut rng));
    }
}
