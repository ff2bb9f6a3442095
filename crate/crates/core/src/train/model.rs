use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::gcn::{Classifier, ClassifierVars, FcnParams, GcnParams};
use crate::losses::{cross_entropy, kl_loss, masked_mse_loss, mse_loss};
use crate::mask::{elasticnet_on_tape, MaskVars, SparseMask};
use crate::nn::{ModelError, Module};
use crate::vae::{reparameterize, VaeParams, VaeVars};

use super::config::LossWeights;

/// The full pipeline `x -> x' -> x̂ -> logits`; absent stages pass their input through.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub k: usize,
    pub mask: Option<SparseMask<f64>>,
    pub vae: Option<VaeParams<f64>>,
    pub classifier: Classifier<f64>,
}

/// How the latent is produced in a forward pass.
pub enum Latent<'a, R: Rng + ?Sized> {
    /// `z = mu`.
    Mean,
    /// `z = mu + exp(logvar / 2) ⊙ ε` with ε drawn from `rng`.
    Sample(&'a mut R),
}

/// Options of one forward pass.
pub struct ForwardSpec<'a> {
    pub weights: &'a LossWeights,
    pub masked_residual_mse: bool,
    /// `None` on unlabeled steps: the classifier is not run and `L_CE` is 0.
    pub labels: Option<&'a [u8]>,
}

/// Loss terms of one forward pass; `None` means the term is absent (value 0).
#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    pub logits: Option<Var>,
    pub l_s: Option<Var>,
    pub l_mse: Option<Var>,
    pub l_kl: Option<Var>,
    pub l_ce: Option<Var>,
    pub total: Var,
    bindings: Bindings,
}

#[derive(Clone, Copy, Debug)]
struct Bindings {
    mask: Option<MaskVars>,
    vae: Option<VaeVars>,
    classifier: Option<ClassifierVars>,
}

/// Scalar values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub l_s: f64,
    pub l_mse: f64,
    pub l_kl: f64,
    pub l_ce: f64,
    pub total: f64,
}

impl LossValues {
    /// `((λ1 L_S + λ2 L_MSE) + λ3 L_KL) + λ4 L_CE`, in the order the tape sums them.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        let mut t = self.l_s * w.lambda1;
        t += self.l_mse * w.lambda2;
        t += self.l_kl * w.lambda3;
        t += self.l_ce * w.lambda4;
        t
    }
}

impl ForwardOut {
    pub fn values(&self, tape: &Tape<f64>) -> LossValues {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        LossValues {
            l_s: get(self.l_s),
            l_mse: get(self.l_mse),
            l_kl: get(self.l_kl),
            l_ce: get(self.l_ce),
            total: tape.scalar(self.total),
        }
    }
}

impl Model {
    pub fn edges(&self) -> usize {
        crate::data::edge_count(self.k)
    }

    pub fn new_gcn<R: Rng + ?Sized>(k: usize, vae_latent: Option<usize>, rng: &mut R) -> Self {
        let e = crate::data::edge_count(k);
        let vae = vae_latent.map(|d| VaeParams::init(e, d, rng));
        Self {
            k,
            mask: None,
            vae,
            classifier: Classifier::Gcn(GcnParams::init(k, rng)),
        }
    }

    pub fn new_fcn<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        Self {
            k,
            mask: None,
            vae: None,
            classifier: Classifier::Fcn(FcnParams::init(crate::data::edge_count(k), rng)),
        }
    }

    /// Records the pipeline and its losses for a `[B, E]` batch.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<f64>,
        x: &[f64],
        batch: usize,
        spec: &ForwardSpec<'_>,
        latent: Latent<'_, R>,
    ) -> Result<ForwardOut, ModelError> {
        let e = self.edges();
        if batch == 0 || x.len() != batch * e {
            return Err(ModelError::Length {
                what: "batch",
                expected: batch * e,
                actual: x.len(),
            });
        }
        let w = spec.weights;
        let xv = tape.constant(vec![batch, e], x.to_vec())?;

        let (xprime, mask_vars, l_s) = match &self.mask {
            Some(mask) => {
                let vars = mask.bind(tape)?;
                let xp = SparseMask::apply_on_tape(tape, &vars, xv)?;
                let l_s = if mask.is_binary() {
                    None
                } else {
                    Some(elasticnet_on_tape(tape, &vars, w.lambda_mix)?)
                };
                (xp, Some(vars), l_s)
            }
            None => (xv, None, None),
        };

        let (xhat, vae_vars, l_mse, l_kl) = match &self.vae {
            Some(vae) => {
                let vars = vae.bind(tape);
                let (mu, logvar) = vae.encode(tape, &vars, xprime)?;
                let z = match latent {
                    Latent::Mean => mu,
                    Latent::Sample(rng) => {
                        let d = vae.latent();
                        let eps: Vec<f64> = (0..batch * d).map(|_| rng.sample(StandardNormal)).collect();
                        let eps = tape.constant(vec![batch, d], eps)?;
                        reparameterize(tape, mu, logvar, eps)?.z
                    }
                };
                let xhat = vae.decode(tape, &vars, z)?;
                let l_mse = match (spec.masked_residual_mse, &mask_vars) {
                    (true, Some(mv)) => masked_mse_loss(tape, xprime, xhat, mv.values)?,
                    _ => mse_loss(tape, xprime, xhat)?,
                };
                let l_kl = kl_loss(tape, mu, logvar)?;
                (xhat, Some(vars), Some(l_mse), Some(l_kl))
            }
            None => (xprime, None, None, None),
        };

        let (logits, class_vars, l_ce) = match spec.labels {
            Some(labels) => {
                let vars = self.classifier.bind(tape);
                let logits = self.classifier.forward(tape, &vars, xhat)?;
                let ce = cross_entropy(tape, logits, labels)?;
                (Some(logits), Some(vars), Some(ce))
            }
            None => (None, None, None),
        };

        let mut total: Option<Var> = None;
        for (lambda, term) in [(w.lambda1, l_s), (w.lambda2, l_mse), (w.lambda3, l_kl), (w.lambda4, l_ce)] {
            if let Some(t) = term {
                let scaled = tape.scale(t, lambda)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, scaled)?,
                    None => scaled,
                });
            }
        }
        let total = match total {
            Some(t) => t,
            None => tape.scalar_constant(0.0),
        };
        Ok(ForwardOut {
            logits,
            l_s,
            l_mse,
            l_kl,
            l_ce,
            total,
            bindings: Bindings {
                mask: mask_vars,
                vae: vae_vars,
                classifier: class_vars,
            },
        })
    }

    /// Adds the gradients of every bound, trainable parameter into its tensor.
    pub fn accumulate_grads(&mut self, out: &ForwardOut, grads: &Gradients<f64>) -> Result<(), ModelError> {
        let b = out.bindings;
        if let (Some(mask), Some(mv)) = (self.mask.as_mut(), b.mask) {
            if let Some(lv) = mv.logits {
                for (_, t) in mask.params_mut() {
                    grads.accumulate_into(lv, t)?;
                }
            }
        }
        if let (Some(vae), Some(vv)) = (self.vae.as_mut(), b.vae) {
            zip_accumulate(vae.params_mut(), &vv.all(), grads)?;
        }
        if let Some(cv) = b.classifier {
            zip_accumulate(self.classifier.params_mut(), &cv.all(), grads)?;
        }
        Ok(())
    }

    /// All trainable tensors with their stable names.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        let mut out = Vec::new();
        if let Some(m) = self.mask.as_mut() {
            out.extend(m.params_mut());
        }
        if let Some(v) = self.vae.as_mut() {
            out.extend(v.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    pub fn params(&self) -> Vec<(String, &Tensor<f64>)> {
        let mut out = Vec::new();
        if let Some(m) = self.mask.as_ref() {
            out.extend(m.params());
        }
        if let Some(v) = self.vae.as_ref() {
            out.extend(v.params());
        }
        out.extend(self.classifier.params());
        out
    }

    /// Evaluation-mode logits (`z = mu`) for a list of edge vectors.
    pub fn logits(&self, rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>, ModelError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let flat = rows.concat();
        let labels = vec![0u8; rows.len()];
        let spec = ForwardSpec {
            weights: &LossWeights::default(),
            masked_residual_mse: false,
            labels: Some(&labels),
        };
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, &flat, rows.len(), &spec, Latent::Mean)?;
        let v = tape.value(out.logits.expect("labels given"));
        Ok(v.chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    /// Class with the larger logit; ties go to class 0.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<u8>, ModelError> {
        Ok(self.logits(rows)?.iter().map(|l| u8::from(l[1] > l[0])).collect())
    }
}

fn zip_accumulate(params: Vec<(String, &mut Tensor<f64>)>, vars: &[Var], grads: &Gradients<f64>) -> Result<(), ModelError> {
    debug_assert_eq!(params.len(), vars.len());
    for ((_, t), &v) in params.into_iter().zip(vars) {
        grads.accumulate_into(v, t)?;
    }
    Ok(())
}
