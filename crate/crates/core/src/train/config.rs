use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::vae::DEFAULT_LATENT;

use super::TrainError;

/// Default occlusion ratios swept after training.
pub const DEFAULT_OCCLUSION_GRID: [f64; 7] = [0.0, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99];
/// Candidate values for each loss weight during grid search.
pub const DEFAULT_LAMBDA_GRID: [f64; 3] = [0.1, 0.25, 0.5];
/// Fixed occlusion of the mask_gcn baseline.
pub const MASK_GCN_OCCLUSION: f64 = 0.7;
/// Upper bound on post-binarization fine-tuning epochs.
pub const FINE_TUNE_EPOCHS: usize = 50;

/// Weights of the joint objective `λ1 L_S + λ2 L_MSE + λ3 L_KL + λ4 L_CE`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// ElasticNet mixing between L1 (1.0) and L2 (0.0).
    pub lambda_mix: f64,
}

/// The KL weight sits below the search grid: at grid values the KL term
/// outweighs the reconstruction of small-magnitude edge vectors and the
/// posterior collapses before the classifier picks up any signal.
impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 0.01,
            lambda4: 0.5,
            lambda_mix: 0.5,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }

    pub fn with_lambdas(self, l: [f64; 4]) -> Self {
        Self {
            lambda1: l[0],
            lambda2: l[1],
            lambda3: l[2],
            lambda4: l[3],
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::InvalidConfig(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return Err(TrainError::InvalidConfig(format!(
                "lambda_mix must lie in [0, 1], got {}",
                self.lambda_mix
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodVariant {
    Sparg,
    SpargLabeledOnly,
    SpargAe,
    SpargNoSparsity,
    GcnPlain,
    FcnPlain,
    MaskGcn,
    Lasso,
    ElasticnetBaseline,
    Frobenius,
}

/// How a variant's mask is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    None,
    Trainable,
    FixedByCorrelation,
}

impl MethodVariant {
    pub const ALL: [MethodVariant; 10] = [
        MethodVariant::Sparg,
        MethodVariant::SpargLabeledOnly,
        MethodVariant::SpargAe,
        MethodVariant::SpargNoSparsity,
        MethodVariant::GcnPlain,
        MethodVariant::FcnPlain,
        MethodVariant::MaskGcn,
        MethodVariant::Lasso,
        MethodVariant::ElasticnetBaseline,
        MethodVariant::Frobenius,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodVariant::Sparg => "sparg",
            MethodVariant::SpargLabeledOnly => "sparg_labeled_only",
            MethodVariant::SpargAe => "sparg_ae",
            MethodVariant::SpargNoSparsity => "sparg_no_sparsity",
            MethodVariant::GcnPlain => "gcn_plain",
            MethodVariant::FcnPlain => "fcn_plain",
            MethodVariant::MaskGcn => "mask_gcn",
            MethodVariant::Lasso => "lasso",
            MethodVariant::ElasticnetBaseline => "elasticnet_baseline",
            MethodVariant::Frobenius => "frobenius",
        }
    }

    pub fn mask_kind(self) -> MaskKind {
        match self {
            MethodVariant::SpargNoSparsity | MethodVariant::GcnPlain | MethodVariant::FcnPlain => MaskKind::None,
            MethodVariant::MaskGcn => MaskKind::FixedByCorrelation,
            _ => MaskKind::Trainable,
        }
    }

    pub fn uses_vae(self) -> bool {
        matches!(
            self,
            MethodVariant::Sparg | MethodVariant::SpargLabeledOnly | MethodVariant::SpargAe | MethodVariant::SpargNoSparsity
        )
    }

    /// Whether the latent is sampled during training (the autoencoder ablation uses `z = mu`).
    pub fn samples_latent(self) -> bool {
        self.uses_vae() && self != MethodVariant::SpargAe
    }

    /// Whether training alternates with steps on the unlabeled OOD subjects.
    pub fn uses_unlabeled(self) -> bool {
        matches!(self, MethodVariant::Sparg | MethodVariant::SpargAe | MethodVariant::SpargNoSparsity)
    }

    pub fn uses_fcn(self) -> bool {
        self == MethodVariant::FcnPlain
    }

    /// Weights actually optimized by this variant.
    pub fn effective_weights(self, w: LossWeights) -> LossWeights {
        let mut e = w;
        match self {
            MethodVariant::Sparg | MethodVariant::SpargLabeledOnly => {}
            MethodVariant::SpargAe => e.lambda3 = 0.0,
            MethodVariant::SpargNoSparsity => e.lambda1 = 0.0,
            MethodVariant::GcnPlain | MethodVariant::FcnPlain | MethodVariant::MaskGcn => {
                e = LossWeights {
                    lambda1: 0.0,
                    lambda2: 0.0,
                    lambda3: 0.0,
                    lambda4: 1.0,
                    lambda_mix: w.lambda_mix,
                }
            }
            MethodVariant::Lasso | MethodVariant::ElasticnetBaseline | MethodVariant::Frobenius => {
                e.lambda2 = 0.0;
                e.lambda3 = 0.0;
                if self == MethodVariant::Lasso {
                    e.lambda_mix = 1.0;
                } else if self == MethodVariant::Frobenius {
                    e.lambda_mix = 0.0;
                }
            }
        }
        e
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodVariant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| TrainError::UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: MethodVariant,
    pub weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub occlusion_grid: Vec<f64>,
    pub seed: u64,
    pub fine_tune_after_binarize: bool,
    pub masked_residual_mse: bool,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: MethodVariant::Sparg,
            weights: LossWeights::default(),
            lr: 3e-4,
            batch_size: 16,
            max_epochs: 500,
            patience: 20,
            occlusion_grid: DEFAULT_OCCLUSION_GRID.to_vec(),
            seed: 0,
            fine_tune_after_binarize: false,
            masked_residual_mse: false,
            latent_dim: DEFAULT_LATENT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.weights.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(TrainError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if let Some(r) = self.occlusion_grid.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(TrainError::InvalidConfig(format!("occlusion ratio {r} outside [0, 1)")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in MethodVariant::ALL {
            assert_eq!(v.name().parse::<MethodVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!(matches!("spar".parse::<MethodVariant>(), Err(TrainError::UnknownVariant(_))));
    }

    #[test]
    fn baseline_weights() {
        let w = LossWeights::default();
        let lasso = MethodVariant::Lasso.effective_weights(w);
        assert_eq!((lasso.lambda_mix, lasso.lambda2, lasso.lambda3), (1.0, 0.0, 0.0));
        assert_eq!(MethodVariant::Frobenius.effective_weights(w).lambda_mix, 0.0);
        assert_eq!(MethodVariant::SpargNoSparsity.effective_weights(w).lambda1, 0.0);
        assert_eq!(MethodVariant::SpargAe.effective_weights(w).lambda3, 0.0);
        assert_eq!(MethodVariant::GcnPlain.effective_weights(w).as_array(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.batch_size, c.max_epochs, c.patience), (3e-4, 16, 500, 20));
        assert_eq!(c.occlusion_grid, DEFAULT_OCCLUSION_GRID);
        c.validate().unwrap();
        let bad = TrainConfig {
            occlusion_grid: vec![1.0],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), c);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 0.1, "bogus": 1}"#).is_err());
    }
}
