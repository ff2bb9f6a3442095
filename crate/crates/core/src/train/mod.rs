//! Joint optimization of mask, VAE and classifier, the baseline and ablation
//! variants, and the cross-validation / grid-search drivers around them.

mod config;
mod fit;
mod model;
mod search;

use thiserror::Error;

use crate::data::DataError;
use crate::eval::{EvalError, ReportError};
use crate::nn::ModelError;

pub use config::{
    LossWeights, MaskKind, MethodVariant, TrainConfig, DEFAULT_LAMBDA_GRID, DEFAULT_OCCLUSION_GRID, FINE_TUNE_EPOCHS,
    MASK_GCN_OCCLUSION,
};
pub use fit::{binarize, correlation_mask, init_model, run_variant, train, EpochRecord, History, StepRecord, TrainedModel};
pub use model::{ForwardOut, ForwardSpec, Latent, LossValues, Model};
pub use search::{
    aggregate, best_row, binarize_and_evaluate, cross_validate, eval_report, evaluate_splits, grid_search, occlusion_sweep,
    select_ratio, table_csv, variant_table, Aggregate, CvResult, EvalEntry, FoldResult, GridOutcome, GridRow, GridSpec,
    ReportOptions, SplitScores, TableRow,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("the labeled training set is empty")]
    EmptyLabeled,
    #[error("training diverged in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
}

impl From<crate::autodiff::AutodiffError> for TrainError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<ReportError> for TrainError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Eval(e) => TrainError::Eval(e),
            ReportError::Data(e) => TrainError::Data(e),
        }
    }
}
