use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::data::{Dataset, FoldSplit};
use crate::eval::balanced_accuracy;
use crate::mask::{kept_count, top_edges, SparseMask};

use super::config::{LossWeights, MaskKind, MethodVariant, TrainConfig, FINE_TUNE_EPOCHS, MASK_GCN_OCCLUSION};
use super::model::{ForwardSpec, Latent, LossValues, Model};
use super::TrainError;

/// Loss components of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub labeled: bool,
    pub l_s: f64,
    pub l_mse: f64,
    pub l_kl: f64,
    pub l_ce: f64,
    pub total: f64,
}

impl StepRecord {
    pub fn losses(&self) -> LossValues {
        LossValues {
            l_s: self.l_s,
            l_mse: self.l_mse,
            l_kl: self.l_kl,
            l_ce: self.l_ce,
            total: self.total,
        }
    }
}

/// Per-epoch means over the labeled steps, plus validation metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_s: f64,
    pub l_mse: f64,
    pub l_kl: f64,
    pub l_ce: f64,
    pub total: f64,
    pub val_balacc: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,l_s,l_mse,l_kl,l_ce,total,val_balacc,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.epoch, e.l_s, e.l_mse, e.l_kl, e.l_ce, e.total, e.val_balacc, e.val_loss
            ));
        }
        s
    }
}

/// A trained pipeline with the settings and history that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub variant: MethodVariant,
    pub config: TrainConfig,
    pub fold: usize,
    pub model: Model,
    pub history: History,
    /// Epoch (1-based) whose parameters were restored; 0 if none completed.
    pub best_epoch: usize,
    /// Evaluation-mode training loss before the first step.
    pub initial_loss: f64,
    /// Evaluation-mode training loss of the restored parameters.
    pub final_loss: f64,
}

/// Edge vectors and labels of one fold, materialized once.
pub(crate) struct FoldData {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<u8>,
    pub val_x: Vec<Vec<f64>>,
    pub val_y: Vec<u8>,
    pub unlabeled_x: Vec<Vec<f64>>,
}

fn labels_of(dataset: &Dataset, idx: &[usize], part: &str) -> Result<Vec<u8>, TrainError> {
    idx.iter()
        .map(|&i| {
            dataset.subjects.get(i).and_then(|s| s.label).ok_or_else(|| {
                TrainError::InvalidConfig(format!(
                    "{part} subject {} has no label",
                    dataset.subjects.get(i).map_or("<out of range>", |s| s.id.as_str())
                ))
            })
        })
        .collect()
}

fn check_indices(dataset: &Dataset, fold: &FoldSplit) -> Result<(), TrainError> {
    let n = dataset.subjects.len();
    let parts = [
        &fold.train_labeled,
        &fold.validation,
        &fold.test_id,
        &fold.train_unlabeled,
        &fold.test_ood,
    ];
    if let Some(&bad) = parts.iter().flat_map(|p| p.iter()).find(|&&i| i >= n) {
        return Err(TrainError::InvalidConfig(format!(
            "fold {} refers to subject index {bad}, dataset has {n}",
            fold.fold
        )));
    }
    Ok(())
}

impl FoldData {
    pub fn new(dataset: &Dataset, fold: &FoldSplit) -> Result<Self, TrainError> {
        check_indices(dataset, fold)?;
        if fold.train_labeled.is_empty() {
            return Err(TrainError::EmptyLabeled);
        }
        Ok(Self {
            train_x: dataset.edges_of(&fold.train_labeled),
            train_y: labels_of(dataset, &fold.train_labeled, "training")?,
            val_x: dataset.edges_of(&fold.validation),
            val_y: labels_of(dataset, &fold.validation, "validation")?,
            // labels of unlabeled subjects are never read
            unlabeled_x: dataset.edges_of(&fold.train_unlabeled),
        })
    }
}

/// Wrap-around iterator over a shuffled index list, reshuffled on each pass.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn take(&mut self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count && !self.order.is_empty() {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn gather(rows: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| rows[i].iter().copied()).collect()
}

/// What one call of the optimization loop does.
pub(crate) struct FitPlan {
    pub weights: LossWeights,
    pub sample_latent: bool,
    pub use_unlabeled: bool,
    pub masked_residual_mse: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl FitPlan {
    pub fn for_config(config: &TrainConfig) -> Self {
        let v = config.variant;
        Self {
            weights: v.effective_weights(config.weights),
            sample_latent: v.samples_latent(),
            use_unlabeled: v.uses_unlabeled(),
            masked_residual_mse: config.masked_residual_mse,
            lr: config.lr,
            batch_size: config.batch_size,
            max_epochs: config.max_epochs,
            patience: config.patience,
        }
    }
}

pub(crate) struct FitOutcome {
    pub history: History,
    pub best_epoch: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Evaluation-mode loss and, when labels are given, predictions.
fn evaluate_loss(model: &Model, x: &[Vec<f64>], y: &[u8], plan: &FitPlan) -> Result<(LossValues, Vec<u8>), TrainError> {
    let mut tape = Tape::new();
    let spec = ForwardSpec {
        weights: &plan.weights,
        masked_residual_mse: plan.masked_residual_mse,
        labels: Some(y),
    };
    let out = model.forward::<ChaCha8Rng>(&mut tape, &x.concat(), x.len(), &spec, Latent::Mean)?;
    let logits = tape.value(out.logits.expect("labels given"));
    let preds = logits.chunks(2).map(|c| u8::from(c[1] > c[0])).collect();
    Ok((out.values(&tape), preds))
}

fn check_finite(v: &LossValues, epoch: usize, labeled: bool) -> Result<(), TrainError> {
    let terms = [("L_S", v.l_s), ("L_MSE", v.l_mse), ("L_KL", v.l_kl), ("L_CE", v.l_ce), ("total", v.total)];
    if let Some((name, value)) = terms.iter().find(|(_, x)| !x.is_finite()) {
        return Err(TrainError::Diverged {
            epoch,
            detail: format!(
                "{name} = {value} on a {} step",
                if labeled { "labeled" } else { "unlabeled" }
            ),
        });
    }
    Ok(())
}

fn step(
    model: &mut Model,
    adam: &mut Adam<f64>,
    x: Vec<f64>,
    batch: usize,
    labels: Option<&[u8]>,
    plan: &FitPlan,
    rng: &mut ChaCha8Rng,
) -> Result<LossValues, TrainError> {
    let mut tape = Tape::new();
    let spec = ForwardSpec {
        weights: &plan.weights,
        masked_residual_mse: plan.masked_residual_mse,
        labels,
    };
    let latent = if plan.sample_latent { Latent::Sample(rng) } else { Latent::Mean };
    let out = model.forward(&mut tape, &x, batch, &spec, latent)?;
    let values = out.values(&tape);
    if !values.total.is_finite() {
        return Ok(values);
    }
    let grads = tape.backward(out.total)?;
    model.accumulate_grads(&out, &grads)?;
    let mut params = model.params_mut();
    params.retain(|(_, t)| t.grad().is_some());
    adam.step(params.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)))?;
    // drop the zeroed buffers so parameters not reached next step are skipped
    for (_, t) in model.params_mut() {
        t.clear_grad();
    }
    Ok(values)
}

/// `(balacc, -loss)` compared lexicographically; larger is better.
fn improves(candidate: (f64, f64), best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((ba, bl)) => candidate.0 > ba || (candidate.0 == ba && candidate.1 < bl),
    }
}

/// Alternating labeled/unlabeled optimization with early stopping; the best
/// epoch's parameters are left in `model`.
pub(crate) fn fit(model: &mut Model, data: &FoldData, plan: &FitPlan, rng: &mut ChaCha8Rng) -> Result<FitOutcome, TrainError> {
    if data.train_x.is_empty() {
        return Err(TrainError::EmptyLabeled);
    }
    let (initial, _) = evaluate_loss(model, &data.train_x, &data.train_y, plan)?;
    check_finite(&initial, 0, true)?;

    let mut adam = Adam::new(AdamConfig {
        lr: plan.lr,
        ..AdamConfig::default()
    });
    let mut history = History::default();
    let mut best: Option<(f64, f64)> = None;
    let mut best_epoch = 0;
    let mut best_model = model.clone();
    let mut order: Vec<usize> = (0..data.train_x.len()).collect();
    let mut unlabeled = Cycler::new(data.unlabeled_x.len());
    let use_unlabeled = plan.use_unlabeled && !data.unlabeled_x.is_empty();

    for epoch in 1..=plan.max_epochs {
        order.shuffle(rng);
        let mut sums = LossValues::default();
        let mut count = 0usize;
        for chunk in order.chunks(plan.batch_size) {
            let labels: Vec<u8> = chunk.iter().map(|&i| data.train_y[i]).collect();
            let v = step(model, &mut adam, gather(&data.train_x, chunk), chunk.len(), Some(&labels), plan, rng)?;
            check_finite(&v, epoch, true)?;
            history.steps.push(record(epoch, true, &v));
            sums.l_s += v.l_s;
            sums.l_mse += v.l_mse;
            sums.l_kl += v.l_kl;
            sums.l_ce += v.l_ce;
            sums.total += v.total;
            count += 1;

            if use_unlabeled {
                let idx = unlabeled.take(plan.batch_size, rng);
                let v = step(model, &mut adam, gather(&data.unlabeled_x, &idx), idx.len(), None, plan, rng)?;
                check_finite(&v, epoch, false)?;
                history.steps.push(record(epoch, false, &v));
            }
        }

        let n = count as f64;
        let (val_balacc, val_loss) = if data.val_x.is_empty() {
            (0.0, 0.0)
        } else {
            let (vl, preds) = evaluate_loss(model, &data.val_x, &data.val_y, plan)?;
            check_finite(&vl, epoch, true)?;
            (balanced_accuracy(&preds, &data.val_y)?, vl.total)
        };
        history.epochs.push(EpochRecord {
            epoch,
            l_s: sums.l_s / n,
            l_mse: sums.l_mse / n,
            l_kl: sums.l_kl / n,
            l_ce: sums.l_ce / n,
            total: sums.total / n,
            val_balacc,
            val_loss,
        });

        if improves((val_balacc, val_loss), best) {
            best = Some((val_balacc, val_loss));
            best_epoch = epoch;
            best_model = model.clone();
        } else if epoch - best_epoch >= plan.patience {
            break;
        }
    }

    *model = best_model;
    let (fin, _) = evaluate_loss(model, &data.train_x, &data.train_y, plan)?;
    Ok(FitOutcome {
        history,
        best_epoch,
        initial_loss: initial.total,
        final_loss: fin.total,
    })
}

fn record(epoch: usize, labeled: bool, v: &LossValues) -> StepRecord {
    StepRecord {
        epoch,
        labeled,
        l_s: v.l_s,
        l_mse: v.l_mse,
        l_kl: v.l_kl,
        l_ce: v.l_ce,
        total: v.total,
    }
}

/// Mask-GCN baseline mask: keeps the edges with the largest mean absolute
/// correlation over the labeled training subjects.
pub fn correlation_mask(train_x: &[Vec<f64>], k: usize, occlusion_ratio: f64) -> Result<SparseMask<f64>, TrainError> {
    let e = crate::data::edge_count(k);
    let mut mean = vec![0.0; e];
    for row in train_x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.abs();
        }
    }
    let n = train_x.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let kept = top_edges(&mean, kept_count(e, occlusion_ratio));
    Ok(SparseMask::fixed(k, kept, occlusion_ratio)?)
}

/// Builds the untrained pipeline for a variant.
pub fn init_model(config: &TrainConfig, k: usize, train_x: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Model, TrainError> {
    let v = config.variant;
    let mut model = if v.uses_fcn() {
        Model::new_fcn(k, rng)
    } else {
        Model::new_gcn(k, v.uses_vae().then_some(config.latent_dim), rng)
    };
    model.mask = match v.mask_kind() {
        MaskKind::None => None,
        MaskKind::Trainable => Some(SparseMask::new(k)),
        MaskKind::FixedByCorrelation => Some(correlation_mask(train_x, k, MASK_GCN_OCCLUSION)?),
    };
    Ok(model)
}

/// Trains `config.variant` on one fold.
pub fn run_variant(config: &TrainConfig, fold: &FoldSplit, dataset: &Dataset) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    let data = FoldData::new(dataset, fold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_model(config, dataset.k, &data.train_x, &mut rng)?;
    let plan = FitPlan::for_config(config);
    let out = fit(&mut model, &data, &plan, &mut rng)?;
    Ok(TrainedModel {
        variant: config.variant,
        config: config.clone(),
        fold: fold.fold,
        model,
        history: out.history,
        best_epoch: out.best_epoch,
        initial_loss: out.initial_loss,
        final_loss: out.final_loss,
    })
}

/// Trains the full method; other variants go through [`run_variant`].
pub fn train(config: &TrainConfig, fold: &FoldSplit, dataset: &Dataset) -> Result<TrainedModel, TrainError> {
    if config.variant != MethodVariant::Sparg {
        return Err(TrainError::InvalidConfig(format!(
            "train runs sparg; use run_variant for {}",
            config.variant
        )));
    }
    run_variant(config, fold, dataset)
}

/// Binarizes a continuous mask at `occlusion_ratio`, optionally fine-tuning the
/// rest of the pipeline with the mask frozen. Models without a trainable mask
/// are returned unchanged.
pub fn binarize(model: &TrainedModel, occlusion_ratio: f64, fold: &FoldSplit, dataset: &Dataset) -> Result<TrainedModel, TrainError> {
    let mask = match &model.model.mask {
        Some(m) if !m.is_binary() => m.binarize(occlusion_ratio)?,
        _ => return Ok(model.clone()),
    };
    let mut out = model.clone();
    out.model.mask = Some(mask);
    if model.config.fine_tune_after_binarize {
        let data = FoldData::new(dataset, fold)?;
        let mut plan = FitPlan::for_config(&model.config);
        plan.max_epochs = FINE_TUNE_EPOCHS;
        // ratio-specific stream so each grid point is reproducible on its own
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ occlusion_ratio.to_bits());
        let res = fit(&mut out.model, &data, &plan, &mut rng)?;
        out.final_loss = res.final_loss;
    }
    Ok(out)
}
