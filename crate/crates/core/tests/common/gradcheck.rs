//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparg::autodiff::{AutodiffError, Tape, Tensor, Var};
use sparg::mask::SparseMask;
use sparg::train::{ForwardSpec, Latent, LossWeights, Model};

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: below it the error is effectively absolute, since the
/// difference quotient of an O(1) loss carries roundoff near 1e-10.
pub const FLOOR: f64 = 1e-5;
/// At most this fraction of coordinates may be skipped as non-smooth.
pub const MAX_SKIPPED: f64 = 0.01;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Check {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates whose `±H` window straddles a ReLU or `|.|` kink, detected
    /// from the numeric side alone: the step-H and step-H/2 quotients disagree.
    pub skipped: usize,
}

impl Check {
    fn add(&mut self, analytic: f64, f: impl Fn(f64) -> f64) {
        let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
        let coarse = d(H);
        if rel_err(coarse, d(H / 2.0)) > TOLERANCE {
            self.skipped += 1;
            return;
        }
        self.worst = self.worst.max(rel_err(analytic, coarse));
        self.checked += 1;
    }

    pub fn passes(&self) -> bool {
        self.worst <= TOLERANCE && (self.skipped as f64) <= MAX_SKIPPED * (self.checked + self.skipped) as f64
    }
}

/// Fixed, uneven projection weights so that every output element matters.
fn projection(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 + ((i * 37) % 11) as f64 / 10.0).collect()
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError> + 'a;

fn project(tape: &mut Tape<f64>, out: Var) -> Result<Var, AutodiffError> {
    let shape = tape.shape(out).to_vec();
    let n = tape.value(out).len();
    let w = tape.constant(shape, projection(n))?;
    let p = tape.hadamard(out, w)?;
    tape.sum(p)
}

fn scalar_of(inputs: &[Tensor<f64>], build: &Build<'_>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars).expect("forward");
    let l = project(&mut tape, out).expect("projection");
    tape.scalar(l)
}

/// Tape against finite-difference gradients of `sum(w ⊙ build(inputs))`
/// with respect to every input element.
pub fn check_op(inputs: &[Tensor<f64>], build: &Build<'_>) -> Check {
    let inputs: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars).expect("forward");
    let l = project(&mut tape, out).expect("projection");
    let grads = tape.backward(l).expect("backward");

    let mut check = Check::default();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every input is reached").to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            check.add(a, |h| {
                let mut moved = inputs.clone();
                moved[which].values_mut()[i] += h;
                scalar_of(&moved, build)
            });
        }
    }
    check
}

pub fn tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in `[0.1, 1.5)` and random sign, away from kinks at 0.
pub fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// One named check per differentiable operation (and the composite helpers).
pub fn op_checks(seed: u64) -> Vec<(&'static str, Check)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    let mut out = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<Tensor<f64>>, build: &Build<'_>| {
        out.push((name, check_op(&inputs, build)));
    };

    run("matmul", vec![tensor(&[3, 4], r, -1.0, 1.0), tensor(&[4, 2], r, -1.0, 1.0)], &|t, v| t.matmul(v[0], v[1]));
    run("hadamard", vec![tensor(&[3, 4], r, -1.0, 1.0), tensor(&[3, 4], r, -1.0, 1.0)], &|t, v| t.hadamard(v[0], v[1]));
    run("add", vec![tensor(&[2, 3], r, -1.0, 1.0), tensor(&[2, 3], r, -1.0, 1.0)], &|t, v| t.add(v[0], v[1]));
    run("sub", vec![tensor(&[2, 3], r, -1.0, 1.0), tensor(&[2, 3], r, -1.0, 1.0)], &|t, v| t.sub(v[0], v[1]));
    run("scale", vec![tensor(&[5], r, -1.0, 1.0)], &|t, v| t.scale(v[0], -1.7));
    run("relu", vec![off_zero(&[3, 4], r)], &|t, v| t.relu(v[0]));
    run("sigmoid", vec![tensor(&[3, 4], r, -4.0, 4.0)], &|t, v| t.sigmoid(v[0]));
    run("exp", vec![tensor(&[3, 4], r, -2.0, 2.0)], &|t, v| t.exp(v[0]));
    run("log", vec![tensor(&[3, 4], r, 0.2, 3.0)], &|t, v| t.log(v[0]));
    run("square", vec![tensor(&[3, 4], r, -2.0, 2.0)], &|t, v| t.square(v[0]));
    run("sum", vec![tensor(&[3, 4], r, -1.0, 1.0)], &|t, v| t.sum(v[0]));
    run("mean", vec![tensor(&[3, 4], r, -1.0, 1.0)], &|t, v| t.mean(v[0]));
    run(
        "concat",
        vec![tensor(&[2, 3], r, -1.0, 1.0), tensor(&[1, 3], r, -1.0, 1.0), tensor(&[3, 3], r, -1.0, 1.0)],
        &|t, v| t.concat(v),
    );
    run("slice", vec![tensor(&[5, 3], r, -1.0, 1.0)], &|t, v| t.slice_rows(v[0], 1, 4));
    run("transpose", vec![tensor(&[3, 4], r, -1.0, 1.0)], &|t, v| t.transpose(v[0]));
    run("add_bias", vec![tensor(&[3, 4], r, -1.0, 1.0), tensor(&[4], r, -1.0, 1.0)], &|t, v| t.add_bias(v[0], v[1]));
    run("abs", vec![off_zero(&[3, 4], r)], &|t, v| t.abs(v[0]));
    run("powf", vec![tensor(&[3, 4], r, 0.2, 3.0)], &|t, v| t.powf(v[0], 1.5));
    run("powf_negative", vec![tensor(&[3, 4], r, 0.2, 3.0)], &|t, v| t.powf(v[0], -0.5));
    run("reshape", vec![tensor(&[3, 4], r, -1.0, 1.0)], &|t, v| t.reshape(v[0], vec![2, 6]));
    run("unflatten_upper", vec![tensor(&[10], r, -1.0, 1.0)], &|t, v| t.unflatten_upper(v[0], 5));
    run("unflatten_upper_row", vec![tensor(&[1, 6], r, -1.0, 1.0)], &|t, v| t.unflatten_upper(v[0], 4));
    run("log_softmax", vec![tensor(&[4, 2], r, -3.0, 3.0)], &|t, v| t.log_softmax(v[0]));
    run("log_softmax_wide", vec![tensor(&[2, 5], r, -3.0, 3.0)], &|t, v| t.log_softmax(v[0]));
    run(
        "linear",
        vec![tensor(&[3, 4], r, -1.0, 1.0), tensor(&[4, 2], r, -1.0, 1.0), tensor(&[2], r, -1.0, 1.0)],
        &|t, v| t.linear(v[0], v[1], v[2]),
    );
    run("mul_rows", vec![tensor(&[3, 4], r, -1.0, 1.0), tensor(&[4], r, -1.0, 1.0)], &|t, v| t.mul_rows(v[0], v[1]));
    run("chain", vec![tensor(&[3, 4], r, -1.0, 1.0), tensor(&[4, 4], r, -1.0, 1.0)], &|t, v| {
        let h = t.matmul(v[0], v[1])?;
        let s = t.sigmoid(h)?;
        let e = t.exp(s)?;
        let l = t.log_softmax(e)?;
        let q = t.square(l)?;
        t.mean(q)
    });
    out
}

/// A full pipeline instance for the joint-loss check.
pub struct JointCase {
    pub model: Model,
    pub x: Vec<f64>,
    pub batch: usize,
    pub labels: Vec<u8>,
    pub weights: LossWeights,
    pub masked_residual_mse: bool,
    pub labeled: bool,
    pub eps_seed: u64,
}

impl JointCase {
    /// k = 8 GCN pipeline with a continuous mask, parameters nudged off their
    /// initial values so no bias sits exactly at zero.
    pub fn gcn(seed: u64) -> Self {
        let k = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::new_gcn(k, Some(8), &mut rng);
        let e = model.edges();
        let logits = (0..e).map(|_| rng.random_range(-2.0..2.0)).collect();
        model.mask = Some(SparseMask::from_logits(k, logits).unwrap());
        Self::finish(model, seed, &mut rng)
    }

    pub fn fcn(seed: u64) -> Self {
        let k = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::new_fcn(k, &mut rng);
        let e = model.edges();
        let logits = (0..e).map(|_| rng.random_range(-2.0..2.0)).collect();
        model.mask = Some(SparseMask::from_logits(k, logits).unwrap());
        Self::finish(model, seed, &mut rng)
    }

    fn finish(mut model: Model, seed: u64, rng: &mut ChaCha8Rng) -> Self {
        for (_, t) in model.params_mut() {
            for v in t.values_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
        }
        let batch = 4;
        let x = (0..batch * model.edges()).map(|_| rng.random_range(-0.9..0.9)).collect();
        Self {
            model,
            x,
            batch,
            labels: vec![0, 1, 1, 0],
            weights: LossWeights::default().with_lambdas([0.25, 0.5, 0.1, 0.5]),
            masked_residual_mse: false,
            labeled: true,
            eps_seed: seed.wrapping_add(1000),
        }
    }

    pub fn loss(&self, model: &Model) -> f64 {
        let mut tape = Tape::new();
        let out = self.forward(model, &mut tape);
        tape.scalar(out.total)
    }

    fn forward(&self, model: &Model, tape: &mut Tape<f64>) -> sparg::train::ForwardOut {
        let spec = ForwardSpec {
            weights: &self.weights,
            masked_residual_mse: self.masked_residual_mse,
            labels: self.labeled.then_some(self.labels.as_slice()),
        };
        // the same ε on every evaluation
        let mut rng = ChaCha8Rng::seed_from_u64(self.eps_seed);
        model
            .forward(tape, &self.x, self.batch, &spec, Latent::Sample(&mut rng))
            .expect("forward")
    }

    /// Every trainable parameter element.
    pub fn check(&self) -> Check {
        let mut analytic = self.model.clone();
        let mut tape = Tape::new();
        let out = self.forward(&analytic, &mut tape);
        let grads = tape.backward(out.total).expect("backward");
        analytic.accumulate_grads(&out, &grads).expect("accumulate");

        let mut check = Check::default();
        for (pi, (_, t)) in analytic.params().iter().enumerate() {
            let zeros = vec![0.0; t.numel()];
            // parameters the loss does not reach have no gradient buffer
            let g = t.grad().unwrap_or(&zeros);
            for (i, &a) in g.iter().enumerate() {
                check.add(a, |h| {
                    let mut moved = self.model.clone();
                    moved.params_mut()[pi].1.values_mut()[i] += h;
                    self.loss(&moved)
                });
            }
        }
        check
    }
}

/// Every configuration of the joint loss the training loop can produce.
pub fn joint_checks(seed: u64) -> Vec<(&'static str, Check)> {
    let mut unlabeled = JointCase::gcn(seed);
    unlabeled.labeled = false;
    let mut masked = JointCase::gcn(seed);
    masked.masked_residual_mse = true;
    vec![
        ("joint_labeled", JointCase::gcn(seed).check()),
        ("joint_unlabeled", unlabeled.check()),
        ("joint_masked_residual", masked.check()),
        ("joint_fcn_mask", JointCase::fcn(seed).check()),
    ]
}
