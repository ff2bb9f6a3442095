//! Variational autoencoder over the sparsified edge vector.
//!
//! Encoder `E -> 16 -> 16` with ReLU, linear heads to the latent mean and
//! log-variance, decoder `d_z -> 16 -> 16 -> E` with ReLU hidden layers and a
//! linear output.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::nn::{layer_params, layer_params_mut, linear_vars, Linear, LinearVars, ModelError, Module};
use crate::scalar::Scalar;

pub const HIDDEN_WIDTH: usize = 16;
pub const DEFAULT_LATENT: usize = 8;
/// Initial bias of the log-variance head: the posterior starts nearly
/// deterministic (std ≈ 0.018) and the KL term widens it during training.
pub const LOGVAR_BIAS_INIT: f64 = -8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams<T> {
    pub enc1: Linear<T>,
    pub enc2: Linear<T>,
    pub mu_head: Linear<T>,
    pub logvar_head: Linear<T>,
    pub dec1: Linear<T>,
    pub dec2: Linear<T>,
    pub dec_out: Linear<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct VaeVars {
    pub enc1: LinearVars,
    pub enc2: LinearVars,
    pub mu_head: LinearVars,
    pub logvar_head: LinearVars,
    pub dec1: LinearVars,
    pub dec2: LinearVars,
    pub dec_out: LinearVars,
}

impl VaeVars {
    pub fn all(&self) -> Vec<Var> {
        linear_vars(&[
            self.enc1,
            self.enc2,
            self.mu_head,
            self.logvar_head,
            self.dec1,
            self.dec2,
            self.dec_out,
        ])
    }
}

/// Latent draw for one batch: `z = mu + exp(logvar / 2) ⊙ epsilon`.
#[derive(Clone, Copy, Debug)]
pub struct LatentSample {
    pub mu: Var,
    pub logvar: Var,
    pub epsilon: Var,
    pub z: Var,
}

impl<T: Scalar> VaeParams<T> {
    /// Glorot weights, zero biases except the log-variance head.
    pub fn init<R: Rng + ?Sized>(edges: usize, latent: usize, rng: &mut R) -> Self {
        let h = HIDDEN_WIDTH;
        let mut p = Self {
            enc1: Linear::glorot(edges, h, rng),
            enc2: Linear::glorot(h, h, rng),
            mu_head: Linear::glorot(h, latent, rng),
            logvar_head: Linear::glorot(h, latent, rng),
            dec1: Linear::glorot(latent, h, rng),
            dec2: Linear::glorot(h, h, rng),
            dec_out: Linear::glorot(h, edges, rng),
        };
        p.logvar_head
            .bias
            .values_mut()
            .iter_mut()
            .for_each(|b| *b = T::of(LOGVAR_BIAS_INIT));
        p
    }

    pub fn zeros(edges: usize, latent: usize) -> Self {
        let h = HIDDEN_WIDTH;
        Self {
            enc1: Linear::zeros(edges, h),
            enc2: Linear::zeros(h, h),
            mu_head: Linear::zeros(h, latent),
            logvar_head: Linear::zeros(h, latent),
            dec1: Linear::zeros(latent, h),
            dec2: Linear::zeros(h, h),
            dec_out: Linear::zeros(h, edges),
        }
    }

    pub fn edges(&self) -> usize {
        self.enc1.inputs()
    }

    pub fn latent(&self) -> usize {
        self.mu_head.outputs()
    }

    fn layers(&self) -> Vec<(&'static str, &Linear<T>)> {
        vec![
            ("enc1", &self.enc1),
            ("enc2", &self.enc2),
            ("mu_head", &self.mu_head),
            ("logvar_head", &self.logvar_head),
            ("dec1", &self.dec1),
            ("dec2", &self.dec2),
            ("dec_out", &self.dec_out),
        ]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> VaeVars {
        VaeVars {
            enc1: self.enc1.bind(tape),
            enc2: self.enc2.bind(tape),
            mu_head: self.mu_head.bind(tape),
            logvar_head: self.logvar_head.bind(tape),
            dec1: self.dec1.bind(tape),
            dec2: self.dec2.bind(tape),
            dec_out: self.dec_out.bind(tape),
        }
    }

    fn check_width(tape: &Tape<T>, x: Var, expected: usize, what: &'static str) -> Result<(), ModelError> {
        let shape = tape.shape(x);
        let actual = shape.last().copied().unwrap_or(0);
        if shape.len() != 2 || actual != expected {
            return Err(ModelError::Length { what, expected, actual });
        }
        Ok(())
    }

    /// `[B, E]` sparsified input to `(mu, logvar)`, each `[B, d_z]`.
    pub fn encode(&self, tape: &mut Tape<T>, vars: &VaeVars, x: Var) -> Result<(Var, Var), ModelError> {
        Self::check_width(tape, x, self.edges(), "encoder input")?;
        let h = Linear::forward(tape, vars.enc1, x)?;
        let h = tape.relu(h)?;
        let h = Linear::forward(tape, vars.enc2, h)?;
        let h = tape.relu(h)?;
        let mu = Linear::forward(tape, vars.mu_head, h)?;
        let logvar = Linear::forward(tape, vars.logvar_head, h)?;
        Ok((mu, logvar))
    }

    /// `[B, d_z]` latent to a `[B, E]` reconstruction.
    pub fn decode(&self, tape: &mut Tape<T>, vars: &VaeVars, z: Var) -> Result<Var, ModelError> {
        Self::check_width(tape, z, self.latent(), "decoder input")?;
        let h = Linear::forward(tape, vars.dec1, z)?;
        let h = tape.relu(h)?;
        let h = Linear::forward(tape, vars.dec2, h)?;
        let h = tape.relu(h)?;
        Ok(Linear::forward(tape, vars.dec_out, h)?)
    }

    /// Encodes a single edge vector outside of training.
    pub fn encode_values(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>), ModelError> {
        if x.len() != self.edges() {
            return Err(ModelError::Length {
                what: "encoder input",
                expected: self.edges(),
                actual: x.len(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(vec![1, x.len()], x.to_vec())?;
        let (mu, lv) = self.encode(&mut tape, &vars, xv)?;
        Ok((tape.value(mu).to_vec(), tape.value(lv).to_vec()))
    }

    pub fn decode_values(&self, z: &[T]) -> Result<Vec<T>, ModelError> {
        if z.len() != self.latent() {
            return Err(ModelError::Length {
                what: "decoder input",
                expected: self.latent(),
                actual: z.len(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let zv = tape.constant(vec![1, z.len()], z.to_vec())?;
        let out = self.decode(&mut tape, &vars, zv)?;
        Ok(tape.value(out).to_vec())
    }
}

impl<T: Scalar> Module<T> for VaeParams<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        layer_params("vae", self.layers())
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        layer_params_mut(
            "vae",
            vec![
                ("enc1", &mut self.enc1),
                ("enc2", &mut self.enc2),
                ("mu_head", &mut self.mu_head),
                ("logvar_head", &mut self.logvar_head),
                ("dec1", &mut self.dec1),
                ("dec2", &mut self.dec2),
                ("dec_out", &mut self.dec_out),
            ],
        )
    }
}

/// `z = mu + exp(0.5 logvar) ⊙ epsilon`; `epsilon` is a constant draw.
pub fn reparameterize<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var, epsilon: Var) -> Result<LatentSample, ModelError> {
    let half = tape.scale(logvar, T::of(0.5))?;
    let std = tape.exp(half)?;
    let noise = tape.hadamard(std, epsilon)?;
    let z = tape.add(mu, noise)?;
    Ok(LatentSample {
        mu,
        logvar,
        epsilon,
        z,
    })
}

/// Value-level reparameterization of one sample.
pub fn reparameterize_values<T: Scalar>(mu: &[T], logvar: &[T], epsilon: &[T]) -> Result<Vec<T>, ModelError> {
    if mu.len() != logvar.len() || mu.len() != epsilon.len() {
        return Err(ModelError::Length {
            what: "reparameterize",
            expected: mu.len(),
            actual: if mu.len() != logvar.len() { logvar.len() } else { epsilon.len() },
        });
    }
    let mut tape = Tape::new();
    let n = mu.len();
    let m = tape.constant(vec![n], mu.to_vec())?;
    let l = tape.constant(vec![n], logvar.to_vec())?;
    let e = tape.constant(vec![n], epsilon.to_vec())?;
    let s = reparameterize(&mut tape, m, l, e)?;
    Ok(tape.value(s.z).to_vec())
}
