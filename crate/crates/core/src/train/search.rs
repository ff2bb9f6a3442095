use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldSplit, ParcelNetworkMap};
use crate::eval::{
    balanced_accuracy, confusion_rows, network_report, support_recovery, Confusion, EvalReport, SplitAccuracy, SweepRow,
    REPORT_SCHEMA_VERSION,
};

use super::config::{MaskKind, MethodVariant, TrainConfig, DEFAULT_LAMBDA_GRID};
use super::fit::{binarize, run_variant, TrainedModel};
use super::TrainError;

/// Balanced accuracy and confusion matrix per split; `None` when a split is
/// empty or has unlabeled subjects.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub val_balacc: Option<f64>,
    pub id_balacc: Option<f64>,
    pub ood_balacc: Option<f64>,
    pub confusion: BTreeMap<String, Confusion>,
}

fn score_split(model: &TrainedModel, dataset: &Dataset, idx: &[usize]) -> Result<Option<(f64, Confusion)>, TrainError> {
    let labels: Option<Vec<u8>> = idx.iter().map(|&i| dataset.subjects[i].label).collect();
    let labels = match labels {
        Some(l) if !l.is_empty() => l,
        _ => return Ok(None),
    };
    let preds = model.model.predict(&dataset.edges_of(idx))?;
    let confusion = Confusion::new(&preds, &labels)?;
    Ok(Some((balanced_accuracy(&preds, &labels)?, confusion)))
}

/// Evaluation-mode scores of a model on the validation, ID test and OOD test splits.
pub fn evaluate_splits(model: &TrainedModel, fold: &FoldSplit, dataset: &Dataset) -> Result<SplitScores, TrainError> {
    let mut out = SplitScores::default();
    for (name, idx) in [("validation", &fold.validation), ("id_test", &fold.test_id), ("ood_test", &fold.test_ood)] {
        if let Some((acc, conf)) = score_split(model, dataset, idx)? {
            match name {
                "validation" => out.val_balacc = Some(acc),
                "id_test" => out.id_balacc = Some(acc),
                _ => out.ood_balacc = Some(acc),
            }
            out.confusion.insert(name.to_string(), conf);
        }
    }
    Ok(out)
}

/// Scores of a model at one occlusion ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    /// Occlusion of the evaluated mask; 0 when the model has no mask.
    pub occlusion: f64,
    pub kept_edges: usize,
    pub scores: SplitScores,
}

fn entry_for(model: &TrainedModel, scores: SplitScores) -> EvalEntry {
    let (occlusion, kept_edges) = match &model.model.mask {
        Some(m) => (
            m.occlusion_ratio().unwrap_or(0.0),
            m.kept_edges().map_or(m.edge_count(), <[usize]>::len),
        ),
        None => (0.0, model.model.edges()),
    };
    EvalEntry {
        occlusion,
        kept_edges,
        scores,
    }
}

/// Binarizes at `ratio` (optionally fine-tuning) and scores every split with `z = mu`.
pub fn binarize_and_evaluate(
    model: &TrainedModel,
    ratio: f64,
    fold: &FoldSplit,
    dataset: &Dataset,
) -> Result<(TrainedModel, EvalEntry), TrainError> {
    let bin = binarize(model, ratio, fold, dataset)?;
    let scores = evaluate_splits(&bin, fold, dataset)?;
    let entry = entry_for(&bin, scores);
    Ok((bin, entry))
}

/// One row per ratio.
pub fn occlusion_sweep(model: &TrainedModel, ratios: &[f64], fold: &FoldSplit, dataset: &Dataset) -> Result<Vec<SweepRow>, TrainError> {
    ratios
        .iter()
        .map(|&r| {
            let (_, e) = binarize_and_evaluate(model, r, fold, dataset)?;
            Ok(SweepRow {
                ratio: r,
                id_balacc: e.scores.id_balacc,
                ood_balacc: e.scores.ood_balacc,
            })
        })
        .collect()
}

/// Index of the entry with the best validation accuracy; ties go to the
/// higher occlusion, then to the earlier entry.
pub fn select_ratio(entries: &[EvalEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        let v = e.scores.val_balacc.unwrap_or(f64::NEG_INFINITY);
        let better = match best {
            None => true,
            Some(b) => {
                let bv = entries[b].scores.val_balacc.unwrap_or(f64::NEG_INFINITY);
                v > bv || (v == bv && e.occlusion > entries[b].occlusion)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Binarizes at every grid ratio (a single evaluation for models without a
/// trainable mask) and keeps the validation-selected one.
fn evaluate_selected(
    model: &TrainedModel,
    ratios: &[f64],
    fold: &FoldSplit,
    dataset: &Dataset,
) -> Result<(TrainedModel, EvalEntry), TrainError> {
    let trainable = model.model.mask.as_ref().is_some_and(|m| !m.is_binary());
    let ratios: &[f64] = if trainable && !ratios.is_empty() { ratios } else { &[0.0] };
    let mut results = Vec::with_capacity(ratios.len());
    for &r in ratios {
        results.push(binarize_and_evaluate(model, r, fold, dataset)?);
    }
    let entries: Vec<EvalEntry> = results.iter().map(|(_, e)| e.clone()).collect();
    let best = select_ratio(&entries).expect("at least one ratio");
    Ok(results.swap_remove(best))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, TrainError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TrainError::InvalidConfig(format!("thread pool: {e}")))
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    if values.is_empty() {
        return Aggregate {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Aggregate { mean, std: var.sqrt() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub entry: EvalEntry,
    /// The evaluated (binarized, if applicable) model.
    pub model: TrainedModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub id: Aggregate,
    pub ood: Aggregate,
}

/// Trains on every fold and aggregates ID/OOD test accuracy. With `ratio`
/// the mask is binarized there; otherwise each fold picks its ratio from
/// `config.occlusion_grid` by validation accuracy.
pub fn cross_validate(
    config: &TrainConfig,
    dataset: &Dataset,
    folds: &[FoldSplit],
    ratio: Option<f64>,
    jobs: usize,
) -> Result<CvResult, TrainError> {
    let ratios = ratio.map_or_else(|| config.occlusion_grid.clone(), |r| vec![r]);
    let results: Vec<Result<FoldResult, TrainError>> = pool(jobs)?.install(|| {
        folds
            .par_iter()
            .map(|fold| {
                let trained = run_variant(config, fold, dataset)?;
                let (model, entry) = evaluate_selected(&trained, &ratios, fold, dataset)?;
                Ok(FoldResult {
                    fold: fold.fold,
                    entry,
                    model,
                })
            })
            .collect()
    });
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let id: Vec<f64> = folds.iter().filter_map(|f| f.entry.scores.id_balacc).collect();
    let ood: Vec<f64> = folds.iter().filter_map(|f| f.entry.scores.ood_balacc).collect();
    Ok(CvResult {
        id: aggregate(&id),
        ood: aggregate(&ood),
        folds,
    })
}

/// Candidate values per loss weight; `tied` uses `lambda1` for all four.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
    pub lambda4: Vec<f64>,
    pub ratios: Vec<f64>,
    pub tied: bool,
}

impl GridSpec {
    pub fn default_with_ratios(ratios: Vec<f64>) -> Self {
        Self {
            lambda1: DEFAULT_LAMBDA_GRID.to_vec(),
            lambda2: DEFAULT_LAMBDA_GRID.to_vec(),
            lambda3: DEFAULT_LAMBDA_GRID.to_vec(),
            lambda4: DEFAULT_LAMBDA_GRID.to_vec(),
            ratios,
            tied: false,
        }
    }

    /// Weight tuples in lexicographic order of the lists as given.
    pub fn candidates(&self) -> Vec<[f64; 4]> {
        if self.tied {
            return self.lambda1.iter().map(|&v| [v; 4]).collect();
        }
        let mut out = Vec::new();
        for &a in &self.lambda1 {
            for &b in &self.lambda2 {
                for &c in &self.lambda3 {
                    for &d in &self.lambda4 {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambdas: [f64; 4],
    pub ratio: f64,
    pub val_balacc: f64,
    pub id_balacc: Option<f64>,
    pub ood_balacc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    pub best: GridRow,
    pub best_config: TrainConfig,
}

impl GridOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda1,lambda2,lambda3,lambda4,ratio,val_balacc,id_balacc,ood_balacc\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.lambdas[0],
                r.lambdas[1],
                r.lambdas[2],
                r.lambdas[3],
                r.ratio,
                r.val_balacc,
                opt(r.id_balacc),
                opt(r.ood_balacc)
            )
            .unwrap();
        }
        s
    }
}

fn lex_less(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

/// Picks the row with the best validation accuracy; ties prefer the higher
/// ratio, then the lexicographically smaller weight tuple.
pub fn best_row(rows: &[GridRow]) -> Option<&GridRow> {
    rows.iter().reduce(|best, r| {
        let better = r.val_balacc > best.val_balacc
            || (r.val_balacc == best.val_balacc
                && (r.ratio > best.ratio || (r.ratio == best.ratio && lex_less(&r.lambdas, &best.lambdas))));
        if better {
            r
        } else {
            best
        }
    })
}

/// Exhaustive search over weight tuples and occlusion ratios on one fold.
/// Each tuple is trained once and binarized at every ratio.
pub fn grid_search(base: &TrainConfig, spec: &GridSpec, fold: &FoldSplit, dataset: &Dataset, jobs: usize) -> Result<GridOutcome, TrainError> {
    let candidates = spec.candidates();
    if candidates.is_empty() || spec.ratios.is_empty() {
        return Err(TrainError::InvalidConfig("grid search needs at least one candidate and one ratio".into()));
    }
    if fold.validation.is_empty() {
        return Err(TrainError::InvalidConfig("grid search needs a validation split".into()));
    }
    let per_candidate: Vec<Result<Vec<GridRow>, TrainError>> = pool(jobs)?.install(|| {
        candidates
            .par_iter()
            .map(|&lambdas| {
                let config = TrainConfig {
                    weights: base.weights.with_lambdas(lambdas),
                    ..base.clone()
                };
                let trained = run_variant(&config, fold, dataset)?;
                spec.ratios
                    .iter()
                    .map(|&ratio| {
                        let (_, e) = binarize_and_evaluate(&trained, ratio, fold, dataset)?;
                        Ok(GridRow {
                            lambdas,
                            ratio,
                            val_balacc: e.scores.val_balacc.unwrap_or(f64::NAN),
                            id_balacc: e.scores.id_balacc,
                            ood_balacc: e.scores.ood_balacc,
                        })
                    })
                    .collect()
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(candidates.len() * spec.ratios.len());
    for r in per_candidate {
        rows.extend(r?);
    }
    let best = best_row(&rows).expect("non-empty grid").clone();
    let best_config = TrainConfig {
        weights: base.weights.with_lambdas(best.lambdas),
        ..base.clone()
    };
    Ok(GridOutcome { rows, best, best_config })
}

/// Settings of [`eval_report`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ReportOptions<'a> {
    /// Binarization ratio for a continuous mask; `None` selects one from the
    /// model's occlusion grid by validation accuracy.
    pub ratio: Option<f64>,
    /// Ratios of the occlusion sweep; ignored without a continuous mask.
    pub sweep_ratios: &'a [f64],
    pub map: Option<&'a ParcelNetworkMap>,
}

/// Scores a trained model on one fold and gathers the report artifacts.
/// Returns the evaluated (binarized, where applicable) model with the report.
pub fn eval_report(
    model: &TrainedModel,
    fold: &FoldSplit,
    dataset: &Dataset,
    opts: &ReportOptions<'_>,
) -> Result<(TrainedModel, EvalReport), TrainError> {
    let continuous = model.model.mask.as_ref().is_some_and(|m| !m.is_binary());
    let (evaluated, entry) = match (continuous, opts.ratio) {
        (true, Some(r)) => binarize_and_evaluate(model, r, fold, dataset)?,
        _ => evaluate_selected(model, &model.config.occlusion_grid, fold, dataset)?,
    };
    let sweep = if continuous {
        occlusion_sweep(model, opts.sweep_ratios, fold, dataset)?
    } else {
        Vec::new()
    };
    let bin_mask = evaluated.model.mask.as_ref().filter(|m| m.is_binary());
    let network_counts = match (opts.map, bin_mask) {
        (Some(map), Some(mask)) => Some(network_report(mask, map)?),
        _ => None,
    };
    let (support, nuisance_kept) = match (&dataset.planted, bin_mask) {
        (Some(p), Some(mask)) if !p.informative.is_empty() => {
            let kept = mask.kept_edges().unwrap_or(&[]);
            let nuisance = kept.iter().filter(|e| p.nuisance.contains(e)).count();
            (Some(support_recovery(mask, &p.informative)?), Some(nuisance))
        }
        _ => (None, None),
    };
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        variant: model.variant.to_string(),
        fold: fold.fold,
        occlusion_ratio: entry.occlusion,
        kept_edges: entry.kept_edges,
        balanced_accuracy: SplitAccuracy {
            validation: entry.scores.val_balacc,
            id_test: entry.scores.id_balacc,
            ood_test: entry.scores.ood_balacc,
        },
        confusion: confusion_rows(&entry.scores.confusion),
        sweep,
        network_counts,
        support,
        nuisance_kept,
    };
    Ok((evaluated, report))
}

/// One line of the variant comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub variant: MethodVariant,
    pub id_balacc: Option<f64>,
    pub ood_balacc: Option<f64>,
    pub occlusion: f64,
    pub best_epoch: usize,
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("variant,id_balacc,ood_balacc,occlusion\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.variant, opt(r.id_balacc), opt(r.ood_balacc), r.occlusion).unwrap();
    }
    s
}

/// Trains every listed variant on one fold with shared settings; trainable
/// masks are binarized at the validation-selected grid ratio.
pub fn variant_table(
    base: &TrainConfig,
    variants: &[MethodVariant],
    fold: &FoldSplit,
    dataset: &Dataset,
    jobs: usize,
) -> Result<Vec<TableRow>, TrainError> {
    let rows: Vec<Result<TableRow, TrainError>> = pool(jobs)?.install(|| {
        variants
            .par_iter()
            .map(|&variant| {
                let config = TrainConfig { variant, ..base.clone() };
                let trained = run_variant(&config, fold, dataset)?;
                let ratios = if variant.mask_kind() == MaskKind::Trainable {
                    base.occlusion_grid.clone()
                } else {
                    Vec::new()
                };
                let (_, entry) = evaluate_selected(&trained, &ratios, fold, dataset)?;
                Ok(TableRow {
                    variant,
                    id_balacc: entry.scores.id_balacc,
                    ood_balacc: entry.scores.ood_balacc,
                    occlusion: entry.occlusion,
                    best_epoch: trained.best_epoch,
                })
            })
            .collect()
    });
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(l: [f64; 4], ratio: f64, val: f64) -> GridRow {
        GridRow {
            lambdas: l,
            ratio,
            val_balacc: val,
            id_balacc: None,
            ood_balacc: None,
        }
    }

    #[test]
    fn aggregate_uses_population_std() {
        let a = aggregate(&[0.8; 5]);
        assert!((a.mean - 0.8).abs() < 1e-15 && a.std == 0.0);
        let a = aggregate(&[0.7, 0.9]);
        assert!((a.mean - 0.8).abs() < 1e-15);
        assert!((a.std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn grid_tie_breaks() {
        let l = [0.1; 4];
        let rows = vec![row(l, 0.98, 0.8), row(l, 0.99, 0.8), row(l, 0.9, 0.7)];
        assert_eq!(best_row(&rows).unwrap().ratio, 0.99);
        let rows = vec![row([0.5, 0.1, 0.1, 0.1], 0.9, 0.8), row([0.1, 0.5, 0.1, 0.1], 0.9, 0.8)];
        assert_eq!(best_row(&rows).unwrap().lambdas, [0.1, 0.5, 0.1, 0.1]);
        assert_eq!(best_row(&[row(l, 0.0, 0.5)]).unwrap().lambdas, l);
    }

    #[test]
    fn grid_size() {
        let spec = GridSpec::default_with_ratios(super::super::DEFAULT_OCCLUSION_GRID.to_vec());
        assert_eq!(spec.candidates().len() * spec.ratios.len(), 567);
        let tied = GridSpec { tied: true, ..spec };
        assert_eq!(tied.candidates(), vec![[0.1; 4], [0.25; 4], [0.5; 4]]);
    }

    #[test]
    fn ratio_selection_prefers_sparser_on_ties() {
        let e = |occ: f64, v: f64| EvalEntry {
            occlusion: occ,
            kept_edges: 0,
            scores: SplitScores {
                val_balacc: Some(v),
                ..SplitScores::default()
            },
        };
        assert_eq!(select_ratio(&[e(0.0, 0.7), e(0.9, 0.7), e(0.95, 0.6)]), Some(1));
        assert_eq!(select_ratio(&[]), None);
    }
}
