//! Reconstruction, KL and classification losses, recorded on a tape.

use crate::autodiff::{Tape, Var};
use crate::nn::ModelError;
use crate::scalar::Scalar;

fn same_shape<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, op: &'static str) -> Result<(), ModelError> {
    if tape.shape(a) != tape.shape(b) || tape.shape(a).len() != 2 {
        return Err(crate::autodiff::AutodiffError::ShapeMismatch {
            op,
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        }
        .into());
    }
    Ok(())
}

fn batch_size<T: Scalar>(tape: &Tape<T>, v: Var) -> T {
    T::of(tape.shape(v)[0] as f64)
}

/// Mean over the batch of the squared Euclidean distance `‖x' - x̂‖²`.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, target: Var, recon: Var) -> Result<Var, ModelError> {
    same_shape(tape, target, recon, "mse_loss")?;
    let n = batch_size(tape, target);
    let d = tape.sub(target, recon)?;
    let sq = tape.square(d)?;
    let s = tape.sum(sq)?;
    Ok(tape.scale(s, T::one() / n)?)
}

/// Like [`mse_loss`] but with every residual weighted by the mask value of
/// its edge (`weights: [1, E]`), so occluded edges contribute nothing.
pub fn masked_mse_loss<T: Scalar>(tape: &mut Tape<T>, target: Var, recon: Var, weights: Var) -> Result<Var, ModelError> {
    same_shape(tape, target, recon, "masked_mse_loss")?;
    let n = batch_size(tape, target);
    let d = tape.sub(target, recon)?;
    let d = tape.mul_rows(d, weights)?;
    let sq = tape.square(d)?;
    let s = tape.sum(sq)?;
    Ok(tape.scale(s, T::one() / n)?)
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))`, summed over latent
/// dimensions and averaged over the batch.
pub fn kl_loss<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var) -> Result<Var, ModelError> {
    same_shape(tape, mu, logvar, "kl_loss")?;
    let n = batch_size(tape, mu);
    let count = T::of(tape.value(mu).len() as f64);
    let mu2 = tape.square(mu)?;
    let var = tape.exp(logvar)?;
    let a = tape.sub(logvar, mu2)?;
    let b = tape.sub(a, var)?;
    let s = tape.sum(b)?;
    // -1/2 * (count + s) / n
    let ones = tape.scalar_constant(count);
    let total = tape.add(s, ones)?;
    Ok(tape.scale(total, -T::of(0.5) / n)?)
}

/// Mean cross-entropy of `[B, C]` logits against class labels, via a stable
/// log-softmax.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[u8]) -> Result<Var, ModelError> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(ModelError::Length {
            what: "labels",
            expected: shape.first().copied().unwrap_or(0),
            actual: labels.len(),
        });
    }
    let classes = shape[1];
    let mut onehot = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(ModelError::InvalidLabel(l));
        }
        onehot[i * classes + l as usize] = T::one();
    }
    let n = T::of(labels.len() as f64);
    let lsm = tape.log_softmax(logits)?;
    let pick = tape.constant(shape, onehot)?;
    let picked = tape.hadamard(lsm, pick)?;
    let s = tape.sum(picked)?;
    Ok(tape.scale(s, -T::one() / n)?)
}

/// Cross-entropy of a single pair of logits.
pub fn cross_entropy_value<T: Scalar>(logits: [T; 2], label: u8) -> Result<T, ModelError> {
    let mut tape = Tape::new();
    let l = tape.constant(vec![1, 2], logits.to_vec())?;
    let ce = cross_entropy(&mut tape, l, &[label])?;
    Ok(tape.scalar(ce))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(tape: &mut Tape<f64>, rows: &[&[f64]]) -> Var {
        let cols = rows[0].len();
        tape.constant(vec![rows.len(), cols], rows.concat()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let mut t = Tape::new();
        let a = batch(&mut t, &[&[0.3, -0.2]]);
        let l = mse_loss(&mut t, a, a).unwrap();
        assert_eq!(t.scalar(l), 0.0);

        let x = batch(&mut t, &[&[0.0, 0.0]]);
        let y = batch(&mut t, &[&[1.0, 1.0]]);
        let l = mse_loss(&mut t, x, y).unwrap();
        assert_eq!(t.scalar(l), 2.0);

        // per-sample losses 2 and 4
        let x = batch(&mut t, &[&[0.0, 0.0], &[0.0, 0.0]]);
        let y = batch(&mut t, &[&[1.0, 1.0], &[2.0, 0.0]]);
        let l = mse_loss(&mut t, x, y).unwrap();
        assert_eq!(t.scalar(l), 3.0);

        let z = batch(&mut t, &[&[0.0, 0.0, 0.0]]);
        assert!(mse_loss(&mut t, x, z).is_err());
    }

    #[test]
    fn masked_mse_ignores_zero_weight_edges() {
        let mut t = Tape::new();
        let x = batch(&mut t, &[&[0.0, 0.0]]);
        let y = batch(&mut t, &[&[1.0, 3.0]]);
        let w = t.constant(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let l = masked_mse_loss(&mut t, x, y, w).unwrap();
        assert_eq!(t.scalar(l), 1.0);
    }

    #[test]
    fn kl_examples() {
        let mut t = Tape::new();
        let z = batch(&mut t, &[&[0.0, 0.0]]);
        let l = kl_loss(&mut t, z, z).unwrap();
        assert_eq!(t.scalar(l), 0.0);

        let mu = batch(&mut t, &[&[1.0]]);
        let lv = batch(&mut t, &[&[0.0]]);
        let l = kl_loss(&mut t, mu, lv).unwrap();
        assert!((t.scalar(l) - 0.5).abs() < 1e-12);

        let mu = batch(&mut t, &[&[0.0]]);
        let lv = batch(&mut t, &[&[4f64.ln()]]);
        let l = kl_loss(&mut t, mu, lv).unwrap();
        let expected = -0.5 * (1.0 + 4f64.ln() - 4.0);
        assert!((t.scalar(l) - expected).abs() < 1e-12);
        assert!((t.scalar(l) - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy_value([0.3, 0.3], 1).unwrap() - 2f64.ln()).abs() < 1e-12);
        let l0 = cross_entropy_value([10.0, -10.0], 0).unwrap();
        assert!((l0 - (1.0 + (-20f64).exp()).ln()).abs() < 1e-15);
        assert!((l0 - 2.06e-9).abs() < 1e-11);
        let l1: f64 = cross_entropy_value([10.0, -10.0], 1).unwrap();
        assert!((l1 - 20.0).abs() < 1e-8);
        assert_eq!(cross_entropy_value([0.0, 0.0], 2), Err(ModelError::InvalidLabel(2)));
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        for &(a, b) in &[(1e3, -1e3), (-1e3, 1e3), (1e3, 1e3)] {
            for label in [0, 1] {
                let v: f64 = cross_entropy_value([a, b], label).unwrap();
                assert!(v.is_finite(), "{a} {b} {label}");
            }
        }
        assert_eq!(cross_entropy_value([1e3, -1e3], 1).unwrap(), 2e3);
    }
}
